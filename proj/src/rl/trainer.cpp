#include "mate/rl/trainer.hpp"

#include "mate/nn/seed.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace mate::rl {

Algo parse_algo(std::string_view name) {
  if (name == "ddqn") return Algo::ddqn;
  if (name == "sac") return Algo::sac;
  throw ConfigError("unknown algorithm '" + std::string(name) + "' (expected ddqn or sac)");
}

std::string_view to_string(Algo a) { return a == Algo::ddqn ? "ddqn" : "sac"; }

TrainConfig TrainConfig::defaults(Algo algo) {
  TrainConfig c;
  c.algo = algo;
  if (algo == Algo::sac) {
    c.lr = 1e-4;
    c.grad_clip = 0.0;
    c.heads.hidden = {512, 512};
  }
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const char* key, const std::string& why) {
    if (!ok) throw ConfigError(std::string(key) + ": " + why);
  };
  require(gamma > 0.0 && gamma <= 1.0, "train.gamma", "must lie in (0, 1]");
  require(tau > 0.0 && tau <= 1.0, "train.tau", "must lie in (0, 1]");
  require(lr > 0.0, "train.lr", "must be positive");
  require(episodes > 0, "train.episodes", "must be positive");
  require(batch_size > 0, "train.batch_size", "must be positive");
  require(buffer_size > 0, "train.buffer_size", "must be positive");
  require(grad_clip >= 0.0, "train.grad_clip", "must be non-negative (0 disables)");
  require(alpha > 0.0, "train.alpha", "must be positive");
  require(epsilon_decay > 0.0 && epsilon_decay <= 1.0, "train.epsilon_decay", "must lie in (0, 1]");
  require(warmup_episodes > 0, "train.warmup_episodes", "must be positive");
  require(max_batch_transitions > 0, "train.max_batch_transitions", "must be positive");
  require(!heads.hidden.empty(), "train.hidden", "needs at least one layer");
  for (std::size_t h : heads.hidden) require(h > 0, "train.hidden", "layer widths must be positive");
  require(heads.state_dim > 0, "train.state_dim", "must be positive");
  require(eval_episodes > 0, "train.eval_episodes", "must be positive");
  require(workers > 0, "train.workers", "must be positive");
}

TrainSeeds TrainSeeds::from_master(std::uint64_t master) {
  return {nn::derive_seed(master, "init"),   nn::derive_seed(master, "env"),    nn::derive_seed(master, "explore"),
          nn::derive_seed(master, "replay"), nn::derive_seed(master, "update"), nn::derive_seed(master, "eval")};
}

EvalSummary summarize_returns(std::span<const double> returns) {
  EvalSummary s;
  s.episodes = returns.size();
  if (returns.empty()) return s;
  const double n = static_cast<double>(returns.size());
  s.mean = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : returns) var += (r - s.mean) * (r - s.mean);
  s.stddev = std::sqrt(var / n);
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  s.min = *lo;
  s.max = *hi;
  return s;
}

Trainer::Trainer(const envs::EnvConfig& env, const memory::EncoderConfig& memory, const TrainConfig& config,
                 const TrainSeeds& seeds)
    : env_config_(envs::resolve(env)),
      memory_config_(memory),
      config_(config),
      seeds_(seeds),
      env_(envs::make_env(env_config_)),
      replay_(config.buffer_size),
      replay_rng_(seeds.replay),
      update_rng_(seeds.update) {
  config_.validate();
  const envs::ActionSpace space = env_->action_space();
  if (config_.algo == Algo::ddqn && space.kind != envs::ActionKind::discrete) {
    throw ConfigError("train.algo: ddqn needs a discrete-action environment, " + env_config_.name + " is continuous");
  }
  if (config_.algo == Algo::sac && space.kind != envs::ActionKind::continuous) {
    throw ConfigError("train.algo: sac needs a continuous-action environment, " + env_config_.name + " is discrete");
  }
  memory_config_.input_dim = env_->transition_dim();
  memory_config_.horizon = env_->horizon();
  memory_config_.validate();

  nn::Rng init(seeds.init);
  if (config_.algo == Algo::ddqn) {
    q_.emplace(QNetwork(memory_config_, env_->observation_dim(), space.size, config_.heads, init));
    nn::ParamList params = q_->online.parameters();
    q_opt_ = nn::AdamState(params);
  } else {
    sac_.emplace(SacNetwork(memory_config_, env_->observation_dim(), space.size, config_.heads, init), config_.alpha);
    sac_opt_ = SacOptimizers(sac_->online);
  }
}

const memory::MemoryEncoder& Trainer::memory() const {
  return q_ ? q_->online.trunk.memory : sac_->online.trunk.memory;
}

envs::Action Trainer::act(const Vector& obs, const Vector& readout, bool explore, double epsilon,
                          nn::Rng& rng) const {
  if (q_) return ddqn_act(q_->online, obs, readout, explore ? epsilon : 0.0, rng);
  return sac_act(sac_->online, obs, readout, !explore, rng);
}

EpisodeMetrics Trainer::update_after(envs::EpisodeRecord episode, double epsilon) {
  EpisodeMetrics m;
  m.episode = episode_;
  m.length = episode.length();
  m.episode_return = episode.episode_return();
  m.epsilon = epsilon;
  replay_.add(std::move(episode));
  ++episode_;
  if (replay_.episodes() >= config_.warmup_episodes) {
    EpisodeBatch batch =
        make_batch(replay_.sample(config_.batch_size, replay_rng_, config_.max_batch_transitions));
    if (q_) {
      m.loss = ddqn_update(*q_, q_opt_, batch, {config_.gamma, config_.tau, config_.lr, config_.grad_clip}).loss;
    } else {
      const SacStats s = sac_update(*sac_, sac_opt_, batch,
                                    {config_.gamma, config_.tau, config_.lr, config_.grad_clip, config_.freeze_critic},
                                    update_rng_);
      m.loss = s.critic_loss;
      m.actor_loss = s.actor_loss;
    }
    m.updated = true;
  }
  if (config_.eval_every && episode_ % config_.eval_every == 0) {
    const EvalSummary e = evaluate(config_.eval_episodes, nn::derive_seed(seeds_.eval, episode_));
    m.eval_return = e.mean;
    best_eval_ = std::max(best_eval_, e.mean);
  }
  return m;
}

std::vector<EpisodeMetrics> Trainer::run_round() {
  const std::size_t count = std::min(config_.workers, config_.episodes - std::min(config_.episodes, episode_));
  std::vector<envs::EpisodeRecord> episodes(count);
  std::vector<double> eps(count);
  const std::size_t horizon = env_->horizon();
  auto collect = [&](std::size_t i, envs::Environment& env) {
    const std::size_t idx = episode_ + i;
    eps[i] = q_ ? epsilon_schedule(idx, config_.episodes, horizon, config_.epsilon_decay) : 0.0;
    nn::Rng rng(nn::derive_seed(seeds_.explore, idx));
    episodes[i] = collect_episode(env, nn::derive_seed(seeds_.env, idx), memory(),
                                  [&](const Vector& obs, const Vector& readout, std::size_t) {
                                    return act(obs, readout, true, eps[i], rng);
                                  });
  };
  if (count == 1) {
    collect(0, *env_);
  } else if (count > 1) {
    std::vector<std::unique_ptr<envs::Environment>> envs;
    for (std::size_t i = 0; i < count; ++i) envs.push_back(env_->clone());
    std::vector<std::exception_ptr> errors(count);
    {
      std::vector<std::jthread> threads;
      for (std::size_t i = 0; i < count; ++i) {
        threads.emplace_back([&, i] {
          try {
            collect(i, *envs[i]);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  // Insertion is serialized in episode order.
  std::vector<EpisodeMetrics> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(update_after(std::move(episodes[i]), eps[i]));
  return out;
}

void Trainer::run(const std::function<void(const EpisodeMetrics&)>& on_episode) {
  while (episode_ < config_.episodes) {
    for (const auto& m : run_round()) {
      if (on_episode) on_episode(m);
    }
  }
}

EvalSummary evaluate_policy(const envs::Environment& env, const memory::MemoryEncoder& memory, std::size_t episodes,
                            std::uint64_t seed, const ActionChooser& choose) {
  if (episodes == 0) throw UsageError("evaluation needs at least one episode");
  auto fresh = env.clone();
  std::vector<double> returns;
  for (std::size_t i = 0; i < episodes; ++i) {
    returns.push_back(collect_episode(*fresh, nn::derive_seed(seed, i), memory, choose).episode_return());
  }
  return summarize_returns(returns);
}

EvalSummary Trainer::evaluate(std::size_t episodes, std::uint64_t seed) const {
  nn::Rng rng(seed);
  return evaluate_policy(*env_, memory(), episodes, seed, [&](const Vector& obs, const Vector& readout, std::size_t) {
    return act(obs, readout, false, 0.0, rng);
  });
}

nn::ParamList Trainer::online_parameters() { return q_ ? q_->online.parameters() : sac_->online.parameters(); }

nn::TensorList Trainer::state() {
  nn::TensorList out = nn::snapshot(online_parameters());
  nn::ParamList target = q_ ? q_->target.parameters() : sac_->target.critic_parameters();
  for (auto t : nn::snapshot(target)) {
    t.name = "target/" + t.name;
    out.push_back(std::move(t));
  }
  return out;
}

void Trainer::load_state(const nn::TensorList& tensors) {
  nn::restore(online_parameters(), tensors);
  nn::TensorList target;
  for (const auto& t : tensors) {
    if (t.name.starts_with("target/")) target.push_back({t.name.substr(7), t.tensor, t.dtype});
  }
  if (target.empty()) {
    // Evaluation-only checkpoints carry no target copies.
    if (q_) q_->target = q_->online;
    else sac_->target = sac_->online;
    return;
  }
  nn::restore(q_ ? q_->target.parameters() : sac_->target.critic_parameters(), target);
}

}  // namespace mate::rl
