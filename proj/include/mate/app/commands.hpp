#pragma once

#include "mate/app/checks.hpp"
#include "mate/app/config.hpp"
#include "mate/rl/trainer.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace mate::app {

// Exit codes shared by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;
inline constexpr int kExitCheckFailed = 3;

inline constexpr std::string_view kMetricsVersion = "# mate-metrics v1";

struct TrainOutcome {
  std::filesystem::path run_dir;
  std::size_t episodes = 0;
  std::optional<double> best_eval;
  std::optional<std::string> abort_reason;  // set when training stopped on a numeric fault
};

// Validates and writes config.resolved, metrics.csv (flushed per episode), timing.csv,
// checkpoints/ (every ckpt_every episodes plus final.ckpt). On a numeric fault the run
// directory is still committed with diagnostic.txt and abort_reason set.
TrainOutcome run_train(const RunConfig& config, const std::filesystem::path& root, std::ostream* log = nullptr);

struct EvalOutcome {
  rl::EvalSummary summary;
  std::filesystem::path report;
};

// `target` is a run directory (uses checkpoints/final.ckpt) or a checkpoint inside one.
// Writes eval-s<seed>-n<episodes>.txt beside config.resolved.
EvalOutcome run_eval(const std::filesystem::path& target, std::size_t episodes, std::uint64_t seed);

struct BenchOutcome {
  std::filesystem::path run_dir;
  bench::BenchResult result;
};

BenchOutcome run_bench_command(const RunConfig& config, const std::filesystem::path& root, const std::string& label,
                               std::ostream* log = nullptr);

struct CheckOutcome {
  std::filesystem::path run_dir;
  std::vector<CheckLine> lines;
  bool pass = false;
};

CheckOutcome run_check(Suite suite, const std::filesystem::path& root, const std::string& label,
                       const CheckOptions& options = {});

std::string metrics_header();
std::string metrics_row(const rl::EpisodeMetrics& m);

}  // namespace mate::app
