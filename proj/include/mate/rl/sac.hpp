#pragma once

#include "mate/nn/optim.hpp"
#include "mate/rl/networks.hpp"

namespace mate::rl {

// Bounds for the policy's log standard deviation; the raw head output is squashed into them.
inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

// Shared memory trunk, a squashed-Gaussian actor and two independent critics.
class SacNetwork {
 public:
  SacNetwork() = default;
  SacNetwork(const memory::EncoderConfig& memory, std::size_t obs_dim, std::size_t action_dim,
             const HeadConfig& heads, nn::Rng& rng);

  std::size_t action_dim() const { return action_dim_; }

  // Encoder, state embedding and both critics: everything the TD loss trains.
  nn::ParamList critic_parameters();
  nn::ParamList actor_parameters();
  nn::ParamList parameters();

  Trunk trunk;
  nn::Mlp actor;  // features -> (mean, raw log std)
  nn::Mlp critic1;
  nn::Mlp critic2;

 private:
  std::size_t action_dim_ = 0;
};

template <typename G>
struct PolicySample {
  typename G::Value action;    // tanh(mean + std * noise), N x d
  typename G::Value log_prob;  // N x 1, including the tanh correction
};

// Reparameterised sample for every row of `features`; `noise` is N x d standard normal.
template <typename G>
PolicySample<G> sample_policy(G& g, const nn::Mlp& actor, const typename G::Value& features, const Matrix& noise) {
  const std::size_t d = static_cast<std::size_t>(noise.cols());
  const auto out = actor.forward(g, features);
  const auto mean = g.slice_cols(out, 0, d);
  // log std = min + (max - min) (tanh(raw) + 1) / 2
  const auto log_std = g.add_scalar(g.scale(g.activate(g.slice_cols(out, d, d), nn::Activation::tanh),
                                            0.5 * (kLogStdMax - kLogStdMin)),
                                    0.5 * (kLogStdMax + kLogStdMin));
  const auto eps = g.input(noise);
  const auto pre = g.add(mean, g.mul(g.exp(log_std), eps));
  const auto action = g.activate(pre, nn::Activation::tanh);
  // Gaussian log density of pre, then log |d tanh / d pre| = 2 (log 2 - pre - softplus(-2 pre)).
  const double half_log_two_pi = 0.5 * std::log(2.0 * 3.14159265358979323846);
  const auto gauss = g.add_scalar(g.sub(g.scale(g.square(eps), -0.5), log_std), -half_log_two_pi);
  const auto log_jac = g.scale(
      g.add_scalar(g.sub(g.scale(pre, -1.0), g.activate(g.scale(pre, -2.0), nn::Activation::softplus)), std::log(2.0)),
      2.0);
  return {action, g.row_sum(g.sub(gauss, log_jac))};
}

// min(Q1, Q2) for rows of features with the given actions.
template <typename G>
typename G::Value twin_min(G& g, const SacNetwork& net, const typename G::Value& features,
                           const typename G::Value& actions) {
  const auto in = g.concat_cols({features, actions});
  return g.minimum(net.critic1.forward(g, in), net.critic2.forward(g, in));
}

struct SacHeads {
  SacNetwork online;
  SacNetwork target;  // only its trunk and critics are used and soft-updated
  double alpha = 0.1;

  SacHeads() = default;
  SacHeads(SacNetwork network, double alpha);
};

struct SacOptimizers {
  nn::AdamState critic;
  nn::AdamState actor;
  nn::AdamState joint;  // actor step without freezing, over every parameter

  SacOptimizers() = default;
  explicit SacOptimizers(SacNetwork& net);
};

struct SacSettings {
  double gamma = 0.99;
  double tau = 0.001;
  double lr = 1e-4;
  double grad_clip = 0.0;  // 0 disables
  bool freeze_critic = true;
};

struct SacStats {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
};

// Twin-critic TD step with resampled next actions and the entropy bonus, then a soft
// update of the target trunk and critics.
double sac_critic_step(SacHeads& nets, SacOptimizers& opt, const EpisodeBatch& batch, const SacSettings& cfg,
                       nn::Rng& rng);
// Actor step. With freeze_critic the features are detached and only actor parameters move.
double sac_actor_step(SacHeads& nets, SacOptimizers& opt, const EpisodeBatch& batch, const SacSettings& cfg,
                      nn::Rng& rng);
SacStats sac_update(SacHeads& nets, SacOptimizers& opt, const EpisodeBatch& batch, const SacSettings& cfg,
                    nn::Rng& rng);

// Actor loss on the batch without updating anything (fixed noise).
double sac_actor_loss(const SacHeads& nets, const EpisodeBatch& batch, const Matrix& noise);

// Stochastic sample, or tanh(mean) when deterministic.
envs::Action sac_act(const SacNetwork& net, const Vector& obs, const Vector& readout, bool deterministic,
                     nn::Rng& rng);

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, nn::Rng& rng);

}  // namespace mate::rl
