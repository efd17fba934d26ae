#include "mate/bench/bench.hpp"

#include "mate/errors.hpp"
#include "mate/memory/parallel.hpp"
#include "mate/nn/seed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace mate::bench {

namespace {

using Clock = std::chrono::steady_clock;
using memory::MemoryEncoder;
using nn::Matrix;

constexpr double kMinWindowNs = 100.0;
constexpr std::size_t kMaxRolloutRepeats = 200;

double elapsed_ns(Clock::time_point a, Clock::time_point b) {
  return static_cast<double>(std::chrono::duration_cast<std::chrono::nanoseconds>(b - a).count());
}

MemoryEncoder frozen_encoder(Arch arch, std::size_t horizon, const TimingOptions& o) {
  memory::EncoderConfig cfg;
  cfg.arch = arch;
  cfg.input_dim = o.input_dim;
  cfg.memory_dim = o.memory_dim;
  cfg.horizon = horizon;
  nn::Rng rng(nn::derive_seed(o.seed, "bench/init"));
  return MemoryEncoder(cfg, rng);
}

Matrix synthetic_stream(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  nn::Rng rng(nn::derive_seed(seed, "bench/data"));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

TimingSample blank(Arch arch, Phase phase, std::size_t horizon, std::size_t checkpoint = 0) {
  TimingSample s;
  s.arch = arch;
  s.phase = phase;
  s.horizon = horizon;
  s.checkpoint = checkpoint;
  return s;
}

void finish(TimingSample& s) {
  s.median_ns = median(s.times_ns);
  s.mad_ns = median_abs_deviation(s.times_ns);
}

void check_options(const TimingOptions& o) {
  if (o.repeats < 5) throw ConfigError("bench.repeats must be at least 5");
  if (!(o.min_rollout_ms >= 0.0)) throw ConfigError("bench.min_rollout_ms must be non-negative");
  if (o.memory_dim == 0 || o.input_dim == 0) throw ConfigError("bench memory and input widths must be positive");
}

}  // namespace

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::rollout_total:
      return "rollout_total";
    case Phase::rollout_per_step:
      return "rollout_per_step";
    case Phase::update_total:
      return "update_total";
  }
  return "?";
}

double median(std::vector<double> v) {
  if (v.empty()) throw UsageError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_abs_deviation(const std::vector<double>& v) {
  const double m = median(v);
  std::vector<double> dev;
  dev.reserve(v.size());
  for (double x : v) dev.push_back(std::abs(x - m));
  return median(dev);
}

std::vector<std::size_t> rollout_checkpoints(std::size_t horizon) {
  if (horizon == 0) throw UsageError("rollout checkpoints need a positive horizon");
  return {std::max<std::size_t>(1, horizon / 16), std::max<std::size_t>(1, horizon / 4), horizon};
}

std::vector<TimingSample> time_rollout(Arch arch, std::size_t horizon, const TimingOptions& options) {
  check_options(options);
  if (arch == Arch::none) throw UsageError("nothing to time for the memoryless architecture");
  const MemoryEncoder enc = frozen_encoder(arch, horizon, options);
  const Matrix xs = synthetic_stream(horizon, options.input_dim, options.seed);
  const auto checkpoints = rollout_checkpoints(horizon);

  TimingSample total = blank(arch, Phase::rollout_total, horizon);
  std::vector<TimingSample> per_step;
  std::vector<std::size_t> width;
  for (std::size_t c : checkpoints) {
    per_step.push_back(blank(arch, Phase::rollout_per_step, horizon, c));
    width.push_back(std::min<std::size_t>(c, 8));
  }

  double kept_ns = 0.0;
  auto more = [&](std::size_t rep) {
    if (rep < options.warmup + options.repeats) return true;
    return kept_ns < options.min_rollout_ms * 1e6 && rep < options.warmup + kMaxRolloutRepeats;
  };
  for (std::size_t rep = 0; more(rep); ++rep) {
    auto state = enc.initial_state();
    std::vector<double> window(checkpoints.size(), 0.0);
    // Windows end at their checkpoint; starts are sorted because checkpoints are.
    std::vector<std::size_t> start(checkpoints.size());
    for (std::size_t k = 0; k < checkpoints.size(); ++k) start[k] = checkpoints[k] - width[k] + 1;
    std::vector<Clock::time_point> opened(checkpoints.size());

    const auto t0 = Clock::now();
    for (std::size_t t = 1; t <= horizon; ++t) {
      for (std::size_t k = 0; k < checkpoints.size(); ++k) {
        if (t == start[k]) opened[k] = Clock::now();
      }
      const auto row = xs.row(static_cast<Eigen::Index>(t - 1));
      enc.encode_step(state, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
      for (std::size_t k = 0; k < checkpoints.size(); ++k) {
        if (t == checkpoints[k]) window[k] = elapsed_ns(opened[k], Clock::now());
      }
    }
    const double rollout = elapsed_ns(t0, Clock::now());

    for (std::size_t k = 0; k < checkpoints.size(); ++k) {
      if (window[k] < kMinWindowNs && width[k] < checkpoints[k]) {
        // Too short to resolve; widen and spend this repeat as warmup.
        width[k] = std::min(checkpoints[k], width[k] * 2);
        if (rep >= options.warmup) per_step[k].times_ns.clear();
        continue;
      }
      if (rep >= options.warmup) per_step[k].times_ns.push_back(window[k] / static_cast<double>(width[k]));
    }
    if (rep >= options.warmup) {
      total.times_ns.push_back(rollout);
      kept_ns += rollout;
    }
  }
  // Widening may have discarded kept repeats; top them up.
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    while (per_step[k].times_ns.size() < options.repeats) {
      auto state = enc.initial_state();
      const std::size_t begin = checkpoints[k] - width[k] + 1;
      Clock::time_point opened;
      for (std::size_t t = 1; t <= checkpoints[k]; ++t) {
        if (t == begin) opened = Clock::now();
        const auto row = xs.row(static_cast<Eigen::Index>(t - 1));
        enc.encode_step(state, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
      }
      per_step[k].times_ns.push_back(elapsed_ns(opened, Clock::now()) / static_cast<double>(width[k]));
    }
    per_step[k].inner = width[k];
  }

  std::vector<TimingSample> out{std::move(total)};
  for (auto& s : per_step) out.push_back(std::move(s));
  for (auto& s : out) finish(s);
  return out;
}

TimingSample time_update(Arch arch, std::size_t horizon, std::size_t batch, std::size_t workers,
                         const TimingOptions& options) {
  check_options(options);
  if (arch == Arch::none) throw UsageError("nothing to time for the memoryless architecture");
  if (batch == 0 || workers == 0) throw ConfigError("bench batch and workers must be positive");
  if (arch == Arch::rnn && workers > 1) throw UsageError("the recurrent encoder has no parallel update");
  MemoryEncoder enc = frozen_encoder(arch, horizon, options);
  const Matrix xs = synthetic_stream(horizon * batch, options.input_dim, options.seed);
  const auto seg = nn::Segments::uniform(batch, horizon);
  const double inv_n = 1.0 / static_cast<double>(xs.rows() * static_cast<Eigen::Index>(options.memory_dim));
  const memory::ReadoutLoss loss = [inv_n](nn::Tape& g, nn::Tape::Var r) { return g.scale(g.sum(r), inv_n); };

  TimingSample s = blank(arch, Phase::update_total, horizon);
  s.batch = batch;
  s.workers = workers;
  for (std::size_t rep = 0; rep < options.warmup + options.repeats; ++rep) {
    const auto t0 = Clock::now();
    memory::LossAndGradients result;
    if (workers == 1) result = memory::sequential_gradients(enc, xs, seg, loss);
    else if (arch == Arch::mate) result = memory::position_parallel_gradients(enc, xs, seg, workers, loss);
    else result = memory::episode_parallel_gradients(enc, xs, seg, workers, loss);
    const double ns = elapsed_ns(t0, Clock::now());
    if (!std::isfinite(result.loss)) throw NumericError("benchmark update produced a non-finite loss");
    if (rep >= options.warmup) s.times_ns.push_back(ns);
  }
  finish(s);
  return s;
}

ScalingReport fit_scaling(std::span<const double> horizons, std::span<const double> times_ns) {
  if (horizons.size() != times_ns.size()) throw UsageError("fit_scaling: lengths and times differ in count");
  const std::set<double> distinct(horizons.begin(), horizons.end());
  if (distinct.size() < 4) {
    throw ConfigError("need >= 4 lengths for a scaling fit, got " + std::to_string(distinct.size()));
  }
  ScalingReport r;
  r.horizons.assign(horizons.begin(), horizons.end());
  r.times_ns.assign(times_ns.begin(), times_ns.end());
  const double n = static_cast<double>(horizons.size());
  double sx = 0, sy = 0;
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < horizons.size(); ++i) {
    if (!(horizons[i] > 0.0) || !(times_ns[i] > 0.0)) {
      throw DataError("fit_scaling: lengths and times must be positive (point " + std::to_string(i) + ")");
    }
    lx.push_back(std::log(horizons[i]));
    ly.push_back(std::log(times_ns[i]));
    sx += lx.back();
    sy += ly.back();
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    const double e = ly[i] - (r.intercept + r.slope * lx[i]);
    ss_res += e * e;
  }
  r.r2 = syy > 0 ? 1.0 - ss_res / syy : 1.0;
  return r;
}

SlopeWindow expected_slope(Arch arch) {
  switch (arch) {
    case Arch::mate:
    case Arch::rnn:
      return {0.8, 1.2};
    case Arch::attn:
      return {1.6, 2.4};
    case Arch::none:
      break;
  }
  throw UsageError("no expected scaling for the memoryless architecture");
}

void judge(ScalingReport& report) {
  const SlopeWindow w = expected_slope(report.arch);
  const bool slope_ok = report.slope >= w.lo && report.slope <= w.hi;
  const bool fit_ok = report.r2 >= kMinR2;
  report.pass = slope_ok && fit_ok;
  std::ostringstream os;
  os << (report.pass ? "PASS" : "FAIL");
  if (!slope_ok) os << " slope outside [" << w.lo << ", " << w.hi << "]";
  if (!fit_ok) os << " r2 below " << kMinR2;
  report.verdict = os.str();
}

void BenchGrid::validate() const {
  if (archs.empty()) throw ConfigError("bench.archs must name at least one architecture");
  for (Arch a : archs) {
    if (a == Arch::none) throw ConfigError("bench.archs: the memoryless architecture has nothing to time");
  }
  const std::set<std::size_t> distinct(horizons.begin(), horizons.end());
  if (distinct.size() < 4) throw ConfigError("bench.lengths: need >= 4 lengths, got " + std::to_string(distinct.size()));
  if (*distinct.rbegin() < 16 * *distinct.begin()) throw ConfigError("bench.lengths must span at least 16x");
  if (update_batch == 0) throw ConfigError("bench.batch must be positive");
  if (speedup_batch == 0 || speedup_horizon == 0) throw ConfigError("bench.speedup_batch and bench.speedup_length must be positive");
  if (workers == 0) throw ConfigError("bench.workers must be positive");
}

BenchResult run_bench(const BenchGrid& grid, const TimingOptions& options, const Progress& progress) {
  grid.validate();
  check_options(options);
  auto say = [&](const std::string& s) {
    if (progress) progress(s);
  };
  BenchResult out;
  out.hardware_threads = std::thread::hardware_concurrency();
  std::vector<std::size_t> horizons = grid.horizons;
  std::sort(horizons.begin(), horizons.end());

  for (Arch arch : grid.archs) {
    std::vector<double> hs, rollout, update;
    std::map<std::size_t, double> step_at;
    for (std::size_t T : horizons) {
      say(std::string(memory::to_string(arch)) + " rollout T=" + std::to_string(T));
      auto samples = time_rollout(arch, T, options);
      hs.push_back(static_cast<double>(T));
      rollout.push_back(samples[0].median_ns);
      if (T == horizons.back()) {
        step_at[samples[1].checkpoint] = samples[1].median_ns;
        step_at[samples[3].checkpoint] = samples[3].median_ns;
        out.per_step_ratio.emplace_back(arch, samples[3].median_ns / samples[1].median_ns);
      }
      for (auto& s : samples) out.samples.push_back(std::move(s));

      say(std::string(memory::to_string(arch)) + " update T=" + std::to_string(T));
      auto u = time_update(arch, T, grid.update_batch, 1, options);
      update.push_back(u.median_ns);
      out.samples.push_back(std::move(u));
    }
    for (auto [phase, times] : {std::pair{Phase::rollout_total, &rollout}, std::pair{Phase::update_total, &update}}) {
      ScalingReport r = fit_scaling(hs, *times);
      r.arch = arch;
      r.phase = phase;
      judge(r);
      out.scaling.push_back(std::move(r));
    }
  }

  if (std::find(grid.archs.begin(), grid.archs.end(), Arch::mate) != grid.archs.end()) {
    say("mate update speedup at T=" + std::to_string(grid.speedup_horizon) + ", " + std::to_string(grid.workers) +
        " workers");
    auto single = time_update(Arch::mate, grid.speedup_horizon, grid.speedup_batch, 1, options);
    auto multi = time_update(Arch::mate, grid.speedup_horizon, grid.speedup_batch, grid.workers, options);
    out.speedup = single.median_ns / multi.median_ns;
    out.samples.push_back(std::move(single));
    out.samples.push_back(std::move(multi));
  }
  return out;
}

void write_bench_csv(const std::filesystem::path& path, std::span<const TimingSample> samples) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "arch,phase,T,t_checkpoint,batch,workers,repeats,median_ns,mad_ns\n";
  f.precision(17);
  for (const auto& s : samples) {
    f << memory::to_string(s.arch) << ',' << to_string(s.phase) << ',' << s.horizon << ',' << s.checkpoint << ','
      << s.batch << ',' << s.workers << ',' << s.times_ns.size() << ',' << s.median_ns << ',' << s.mad_ns << '\n';
  }
}

void write_scaling_csv(const std::filesystem::path& path, std::span<const ScalingReport> reports) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write " + path.string());
  f << "arch,phase,slope,r2,verdict\n";
  f.precision(17);
  for (const auto& r : reports) {
    f << memory::to_string(r.arch) << ',' << to_string(r.phase) << ',' << r.slope << ',' << r.r2 << ',' << r.verdict
      << '\n';
  }
}

std::string summarize(const BenchResult& result) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(3);
  for (const auto& r : result.scaling) {
    os << memory::to_string(r.arch) << ' ' << to_string(r.phase) << ": slope " << r.slope << ", r2 " << r.r2 << " -> "
       << r.verdict << '\n';
  }
  for (const auto& [arch, ratio] : result.per_step_ratio) {
    os << memory::to_string(arch) << " per-step ratio t=T vs t=T/16: " << ratio;
    if (arch == Arch::mate) os << (ratio <= kMaxMateStepRatio ? " -> PASS" : " -> FAIL") << " (<= " << kMaxMateStepRatio << ")";
    if (arch == Arch::attn) os << (ratio >= kMinAttnStepRatio ? " -> PASS" : " -> FAIL") << " (>= " << kMinAttnStepRatio << ")";
    os << '\n';
  }
  if (result.speedup > 0.0) {
    os << "mate parallel update speedup: " << result.speedup << (result.speedup >= kMinSpeedup ? " -> PASS" : " -> FAIL")
       << " (>= " << kMinSpeedup << ", " << result.hardware_threads << " hardware threads)\n";
  }
  return os.str();
}

}  // namespace mate::bench
