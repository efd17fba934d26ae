#pragma once

#include "mate/memory/encoder.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mate::bench {

using memory::Arch;

enum class Phase { rollout_total, rollout_per_step, update_total };

std::string_view to_string(Phase p);

struct TimingOptions {
  std::size_t memory_dim = 128;
  std::size_t input_dim = 16;
  std::size_t repeats = 5;  // kept samples, after warmup
  std::size_t warmup = 2;
  // Short rollouts keep repeating until the kept samples add up to this much time.
  double min_rollout_ms = 300.0;
  std::uint64_t seed = 0;

  bool operator==(const TimingOptions&) const = default;
};

struct TimingSample {
  Arch arch = Arch::mate;
  Phase phase = Phase::rollout_total;
  std::size_t horizon = 0;
  std::size_t checkpoint = 0;  // step index for per-step samples, else 0
  std::size_t batch = 1;
  std::size_t workers = 1;
  std::size_t inner = 1;  // steps per timed window (per-step samples)
  std::vector<double> times_ns;  // one per kept repeat
  double median_ns = 0.0;
  double mad_ns = 0.0;
};

double median(std::vector<double> v);
// Median absolute deviation from the median.
double median_abs_deviation(const std::vector<double>& v);

// Checkpoints max(1, T/16), max(1, T/4) and T.
std::vector<std::size_t> rollout_checkpoints(std::size_t horizon);

// Incremental encode_step over a pre-generated stream. Returns one rollout_total sample
// followed by one rollout_per_step sample per checkpoint. A per-step window is widened
// (up to the checkpoint) when it measures under 100 ns.
std::vector<TimingSample> time_rollout(Arch arch, std::size_t horizon, const TimingOptions& options);

// encode_sequence + mean-readout loss + backward over `batch` episodes of length T.
// workers > 1 runs MATE position-parallel and attention episode-parallel; the recurrent
// encoder is sequential only (UsageError).
TimingSample time_update(Arch arch, std::size_t horizon, std::size_t batch, std::size_t workers,
                         const TimingOptions& options);

struct ScalingReport {
  Arch arch = Arch::mate;
  Phase phase = Phase::rollout_total;
  std::vector<double> horizons;
  std::vector<double> times_ns;
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  bool pass = false;
  std::string verdict;
};

// OLS of log(time) on log(T). ConfigError with fewer than 4 distinct T, DataError for
// non-positive values.
ScalingReport fit_scaling(std::span<const double> horizons, std::span<const double> times_ns);

struct SlopeWindow {
  double lo = 0.0;
  double hi = 0.0;
};

// Expected log-log slope: 1 for mate and rnn, 2 for attn, with the acceptance margins.
SlopeWindow expected_slope(Arch arch);
inline constexpr double kMinR2 = 0.98;

// Attaches pass/verdict for the architecture's expected exponent.
void judge(ScalingReport& report);

struct BenchGrid {
  std::vector<Arch> archs{Arch::mate, Arch::rnn, Arch::attn};
  std::vector<std::size_t> horizons{512, 1024, 2048, 4096, 8192};
  std::size_t update_batch = 1;
  // Parallel-update comparison for MATE.
  std::size_t speedup_horizon = 8192;
  std::size_t speedup_batch = 8;
  std::size_t workers = 4;

  void validate() const;
  bool operator==(const BenchGrid&) const = default;
};

struct BenchResult {
  std::vector<TimingSample> samples;
  std::vector<ScalingReport> scaling;
  // Per-step time at t = T over t = T/16, at the largest T.
  std::vector<std::pair<Arch, double>> per_step_ratio;
  double speedup = 0.0;
  std::size_t hardware_threads = 0;
};

using Progress = std::function<void(const std::string&)>;

BenchResult run_bench(const BenchGrid& grid, const TimingOptions& options, const Progress& progress = {});

// Per-step ratio verdicts: mate <= 1.5, attn >= 4. Speedup >= 1.5.
inline constexpr double kMaxMateStepRatio = 1.5;
inline constexpr double kMinAttnStepRatio = 4.0;
inline constexpr double kMinSpeedup = 1.5;

void write_bench_csv(const std::filesystem::path& path, std::span<const TimingSample> samples);
void write_scaling_csv(const std::filesystem::path& path, std::span<const ScalingReport> reports);
std::string summarize(const BenchResult& result);

}  // namespace mate::bench
