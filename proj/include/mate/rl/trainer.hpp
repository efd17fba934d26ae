#pragma once

#include "mate/envs/env.hpp"
#include "mate/memory/encoder.hpp"
#include "mate/nn/checkpoint.hpp"
#include "mate/rl/ddqn.hpp"
#include "mate/rl/replay.hpp"
#include "mate/rl/sac.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string_view>

namespace mate::rl {

enum class Algo { ddqn, sac };

Algo parse_algo(std::string_view name);
std::string_view to_string(Algo a);

struct TrainConfig {
  Algo algo = Algo::ddqn;
  std::size_t episodes = 2000;
  double gamma = 0.99;
  double tau = 0.001;
  double lr = 3e-5;
  std::size_t batch_size = 64;  // episodes per update
  std::size_t buffer_size = 10000;  // transitions
  double grad_clip = 0.03;
  bool freeze_critic = true;
  double alpha = 0.1;
  double epsilon_decay = 0.1;  // fraction of the budget spent annealing epsilon
  std::size_t warmup_episodes = 64;
  std::size_t max_batch_transitions = 65536;
  HeadConfig heads;
  std::size_t eval_every = 0;  // 0 disables periodic evaluation
  std::size_t eval_episodes = 20;
  std::size_t workers = 1;

  // Per-algorithm defaults: DDQN hidden (256, 256), lr 3e-5, clip 0.03;
  // SAC hidden (512, 512), lr 1e-4, no clipping.
  static TrainConfig defaults(Algo algo);
  // ConfigError naming the offending key.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Independent streams derived from one master seed.
struct TrainSeeds {
  std::uint64_t init = 0;
  std::uint64_t env = 0;
  std::uint64_t explore = 0;
  std::uint64_t replay = 0;
  std::uint64_t update = 0;
  std::uint64_t eval = 0;

  static TrainSeeds from_master(std::uint64_t master);
  bool operator==(const TrainSeeds&) const = default;
};

struct EpisodeMetrics {
  std::size_t episode = 0;
  std::size_t length = 0;
  double episode_return = 0.0;
  double epsilon = 0.0;  // DDQN only
  bool updated = false;
  double loss = 0.0;        // TD loss (DDQN) or critic loss (SAC)
  double actor_loss = 0.0;  // SAC only
  std::optional<double> eval_return;
};

struct EvalSummary {
  std::size_t episodes = 0;
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
};

EvalSummary summarize_returns(std::span<const double> returns);

// Mean/std/min/max of `episodes` returns on fresh environment copies; episode i is seeded
// derive_seed(seed, i). UsageError when episodes == 0.
EvalSummary evaluate_policy(const envs::Environment& env, const memory::MemoryEncoder& memory, std::size_t episodes,
                            std::uint64_t seed, const ActionChooser& choose);

// Collect -> store -> update, one gradient update per collected episode once the
// buffer holds `warmup_episodes` episodes.
class Trainer {
 public:
  Trainer(const envs::EnvConfig& env, const memory::EncoderConfig& memory, const TrainConfig& config,
          const TrainSeeds& seeds);

  const TrainConfig& config() const { return config_; }
  const memory::EncoderConfig& memory_config() const { return memory_config_; }
  const envs::Environment& env() const { return *env_; }
  std::size_t episodes_done() const { return episode_; }
  double best_eval() const { return best_eval_; }
  const ReplayBuffer& replay() const { return replay_; }

  // Runs `workers` episodes (collected concurrently when workers > 1) and their updates.
  std::vector<EpisodeMetrics> run_round();
  // Runs until `config.episodes`, reporting each episode as it completes.
  void run(const std::function<void(const EpisodeMetrics&)>& on_episode);

  // Greedy (DDQN) or mean-action (SAC) returns over fresh episodes.
  EvalSummary evaluate(std::size_t episodes, std::uint64_t seed) const;
  envs::Action act(const Vector& obs, const Vector& readout, bool explore, double epsilon, nn::Rng& rng) const;
  const memory::MemoryEncoder& memory() const;

  // Online parameters under their own names, target copies under "target/".
  nn::TensorList state();
  void load_state(const nn::TensorList& tensors);
  nn::ParamList online_parameters();

  QHeads* q_heads() { return q_ ? &*q_ : nullptr; }
  SacHeads* sac_heads() { return sac_ ? &*sac_ : nullptr; }

 private:
  EpisodeMetrics update_after(envs::EpisodeRecord episode, double epsilon);

  envs::EnvConfig env_config_;
  memory::EncoderConfig memory_config_;
  TrainConfig config_;
  TrainSeeds seeds_;
  std::unique_ptr<envs::Environment> env_;
  std::optional<QHeads> q_;
  nn::AdamState q_opt_;
  std::optional<SacHeads> sac_;
  SacOptimizers sac_opt_;
  ReplayBuffer replay_;
  nn::Rng replay_rng_;
  nn::Rng update_rng_;
  std::size_t episode_ = 0;
  double best_eval_ = -std::numeric_limits<double>::infinity();
};

}  // namespace mate::rl
