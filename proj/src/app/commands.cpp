#include "mate/app/commands.hpp"

#include "mate/app/run_dir.hpp"
#include "mate/errors.hpp"
#include "mate/nn/checkpoint.hpp"

#include <charconv>
#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mate::app {

namespace fs = std::filesystem;

namespace {

std::string shortest(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError(path.string() + ": cannot write");
  f << text;
  if (!f.flush()) throw ConfigError(path.string() + ": write failed");
}

fs::path checkpoint_path(const fs::path& run, std::size_t episode) {
  return run / "checkpoints" / ("episode_" + std::to_string(episode) + ".ckpt");
}

}  // namespace

std::string metrics_header() {
  return std::string(kMetricsVersion) + "\nepisode,length,return,epsilon,updated,loss,actor_loss,eval_return\n";
}

std::string metrics_row(const rl::EpisodeMetrics& m) {
  std::string row = std::to_string(m.episode) + ',' + std::to_string(m.length) + ',' + shortest(m.episode_return) + ',' +
                    shortest(m.epsilon) + ',' + (m.updated ? "1" : "0") + ',' + shortest(m.loss) + ',' + shortest(m.actor_loss) + ',';
  if (m.eval_return) row += shortest(*m.eval_return);
  return row + '\n';
}

TrainOutcome run_train(const RunConfig& config, const fs::path& root, std::ostream* log) {
  // Everything that can be rejected up front is rejected before the directory exists.
  rl::Trainer trainer(config.env, config.memory, config.train, config.seeds);
  RunDirectory dir(root, config.label);
  const fs::path& p = dir.path();
  write_text(p / "config.resolved", serialize(config));
  fs::create_directory(p / "checkpoints");

  std::ofstream metrics(p / "metrics.csv", std::ios::binary);
  std::ofstream timing(p / "timing.csv", std::ios::binary);
  if (!metrics || !timing) throw ConfigError(p.string() + ": cannot open metrics files");
  metrics << metrics_header() << std::flush;
  timing << "episode,wall_ms\n";

  TrainOutcome out;
  auto last = std::chrono::steady_clock::now();
  try {
    trainer.run([&](const rl::EpisodeMetrics& m) {
      metrics << metrics_row(m) << std::flush;
      const auto now = std::chrono::steady_clock::now();
      timing << m.episode << ',' << shortest(std::chrono::duration<double, std::milli>(now - last).count()) << '\n';
      last = now;
      const std::size_t done = m.episode + 1;
      if (done % config.ckpt_every == 0 && done < config.train.episodes) {
        nn::write_checkpoint(checkpoint_path(p, done), trainer.state());
      }
      if (log && (done % 100 == 0 || m.eval_return)) {
        *log << "episode " << done << "/" << config.train.episodes << " return " << m.episode_return;
        if (m.eval_return) *log << " eval " << *m.eval_return;
        *log << '\n';
      }
    });
    nn::write_checkpoint(p / "checkpoints" / "final.ckpt", trainer.state());
  } catch (const rl::TrainingAbort& e) {
    write_text(p / "diagnostic.txt", std::string("training aborted: ") + e.what() + "\n\n" + e.dump() + "\n");
    out.abort_reason = e.what();
  } catch (const NumericError& e) {
    write_text(p / "diagnostic.txt", std::string("training aborted: ") + e.what() + "\nepisodes completed: " +
                                         std::to_string(trainer.episodes_done()) + "\n");
    out.abort_reason = e.what();
  }
  metrics.close();
  timing.close();
  out.episodes = trainer.episodes_done();
  if (config.train.eval_every > 0 && out.episodes >= config.train.eval_every) out.best_eval = trainer.best_eval();
  out.run_dir = dir.commit();
  return out;
}

EvalOutcome run_eval(const fs::path& target, std::size_t episodes, std::uint64_t seed) {
  if (episodes == 0) throw UsageError("eval: --episodes must be at least 1");
  fs::path run = target;
  fs::path ckpt = target / "checkpoints" / "final.ckpt";
  if (fs::is_regular_file(target)) {
    ckpt = target;
    run = target.parent_path().filename() == "checkpoints" ? target.parent_path().parent_path() : target.parent_path();
  }
  if (!fs::exists(ckpt)) throw ConfigError(ckpt.string() + ": checkpoint not found");
  const RunConfig config = load_config(run / "config.resolved");
  rl::Trainer trainer(config.env, config.memory, config.train, config.seeds);
  try {
    trainer.load_state(nn::read_checkpoint(ckpt));
  } catch (const DataError& e) {
    throw ConfigError(ckpt.string() + " does not match " + (run / "config.resolved").string() + ": " + e.what());
  }
  EvalOutcome out;
  out.summary = trainer.evaluate(episodes, seed);
  std::ostringstream os;
  os << "checkpoint " << ckpt.string() << "\nepisodes " << out.summary.episodes << "\nseed " << seed << "\nmean "
     << shortest(out.summary.mean) << "\nstd " << shortest(out.summary.stddev) << "\nmin " << shortest(out.summary.min) << "\nmax "
     << shortest(out.summary.max) << '\n';
  out.report = run / ("eval-s" + std::to_string(seed) + "-n" + std::to_string(episodes) + ".txt");
  write_text(out.report, os.str());
  return out;
}

BenchOutcome run_bench_command(const RunConfig& config, const fs::path& root, const std::string& label,
                               std::ostream* log) {
  config.bench.grid.validate();
  RunDirectory dir(root, label);
  write_text(dir.path() / "config.resolved", serialize(config));
  BenchOutcome out;
  out.result = bench::run_bench(config.bench.grid, config.bench.timing, [log](const std::string& s) {
    if (log) *log << s << std::endl;
  });
  bench::write_bench_csv(dir.path() / "bench.csv", out.result.samples);
  bench::write_scaling_csv(dir.path() / "scaling.csv", out.result.scaling);
  write_text(dir.path() / "summary.txt", bench::summarize(out.result));
  out.run_dir = dir.commit();
  return out;
}

CheckOutcome run_check(Suite suite, const fs::path& root, const std::string& label, const CheckOptions& options) {
  RunDirectory dir(root, label);
  CheckOutcome out;
  out.lines = run_suite(suite, options);
  out.pass = all_pass(out.lines);
  write_text(dir.path() / "report.txt", format_report(out.lines));
  out.run_dir = dir.commit();
  return out;
}

}  // namespace mate::app
