#include "mate/app/commands.hpp"
#include "mate/app/run_dir.hpp"
#include "mate/errors.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace mate;
using namespace mate::app;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> label;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.file, "Config file (sections env, memory, train, seeds, bench)");
  cmd->add_option("--set", args.sets, "Override, e.g. --set train.episodes=500")->take_all();
  cmd->add_option("--seed", args.seed, "Master seed");
  cmd->add_option("--label", args.label, "Run label (directory name under the run root)");
}

RunConfig resolve_config(ConfigArgs args, std::optional<std::size_t> workers) {
  if (args.seed) args.sets.insert(args.sets.begin(), "seed=" + std::to_string(*args.seed));
  if (args.label) args.sets.push_back("label=" + *args.label);
  if (workers) args.sets.push_back("train.workers=" + std::to_string(*workers));
  return args.file.empty() ? parse_config("", args.sets) : load_config(args.file, args.sets);
}

template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sum-aggregated transition memory for contextual MDPs: training, evaluation, benchmarks and checks"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  std::optional<std::size_t> workers;
  auto* train = app.add_subcommand("train", "Train an agent and write a run directory");
  add_config_options(train, train_args);
  train->add_option("--workers", workers, "Episodes collected concurrently (default 1, bit-deterministic)");

  std::string eval_target;
  std::size_t eval_episodes = 20;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint with the greedy / mean-action policy");
  eval->add_option("target", eval_target, "Run directory or checkpoint file")->required();
  eval->add_option("-n,--episodes", eval_episodes, "Evaluation episodes");
  eval->add_option("--seed", eval_seed, "Evaluation seed");

  ConfigArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Time rollout and update scaling of the memory architectures");
  add_config_options(bench, bench_args);

  std::string suite_name;
  auto* check = app.add_subcommand("check", "Run a property suite and write report.txt");
  check->add_option("suite", suite_name, "invariance, oracle, recovery, injectivity, gradients or all")->required();
  std::optional<std::string> check_label;
  check->add_option("--label", check_label, "Run label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*train) {
    return guarded([&] {
      const RunConfig cfg = resolve_config(train_args, workers);
      const auto out = run_train(cfg, run_root(), &std::cout);
      std::cout << "run directory: " << out.run_dir.string() << '\n';
      if (out.best_eval) std::cout << "best evaluation return: " << *out.best_eval << '\n';
      if (out.abort_reason) {
        std::cerr << "training aborted: " << *out.abort_reason << " (see " << (out.run_dir / "diagnostic.txt").string()
                  << ")\n";
        return kExitRuntime;
      }
      return kExitOk;
    });
  }
  if (*eval) {
    return guarded([&] {
      const auto out = run_eval(eval_target, eval_episodes, eval_seed);
      std::cout << "episodes " << out.summary.episodes << "\nmean " << out.summary.mean << "\nstd "
                << out.summary.stddev << "\nmin " << out.summary.min << "\nmax " << out.summary.max << "\nwritten to "
                << out.report.string() << '\n';
      return kExitOk;
    });
  }
  if (*bench) {
    return guarded([&] {
      const RunConfig cfg = resolve_config(bench_args, std::nullopt);
      const std::string label =
          bench_args.label ? cfg.label : "bench-s" + std::to_string(cfg.seed);
      const auto out = run_bench_command(cfg, run_root(), label, &std::cerr);
      std::cout << bench::summarize(out.result) << "run directory: " << out.run_dir.string() << '\n';
      return kExitOk;
    });
  }
  return guarded([&] {
    const Suite suite = parse_suite(suite_name);
    const auto out = run_check(suite, run_root(), check_label.value_or("check-" + suite_name));
    std::cout << format_report(out.lines) << "run directory: " << out.run_dir.string() << '\n';
    return out.pass ? kExitOk : kExitCheckFailed;
  });
}
