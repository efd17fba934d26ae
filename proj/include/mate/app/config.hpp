#pragma once

#include "mate/bench/bench.hpp"
#include "mate/envs/env.hpp"
#include "mate/memory/encoder.hpp"
#include "mate/rl/trainer.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mate::app {

struct BenchSection {
  bench::BenchGrid grid;
  bench::TimingOptions timing;

  bool operator==(const BenchSection&) const = default;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string label;  // empty: derived from env, arch, algorithm and seed
  std::size_t ckpt_every = 500;  // episodes; the final checkpoint is always written
  envs::EnvConfig env;
  memory::EncoderConfig memory;
  rl::TrainConfig train;
  rl::TrainSeeds seeds;  // derived from `seed` unless set explicitly
  BenchSection bench;

  std::string default_label() const;
  bool operator==(const RunConfig&) const = default;
};

// Applies `section.key=value` overrides (in order) on top of `text`, fills defaults and
// derived values, and validates. ConfigError names the offending key and line.
RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Every key, defaults applied; parse_config(serialize(c)) == c.
std::string serialize(const RunConfig& config);

}  // namespace mate::app
