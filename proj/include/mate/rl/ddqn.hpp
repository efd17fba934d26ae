#pragma once

#include "mate/nn/optim.hpp"
#include "mate/rl/networks.hpp"

namespace mate::rl {

// Memory trunk plus an MLP mapping features to one value per action.
class QNetwork {
 public:
  QNetwork() = default;
  QNetwork(const memory::EncoderConfig& memory, std::size_t obs_dim, std::size_t actions, const HeadConfig& heads,
           nn::Rng& rng);

  std::size_t actions() const { return head.out_dim(); }

  // (N + E) x |A|, one row per observation row of the batch.
  template <typename G>
  typename G::Value q_values(G& g, const EpisodeBatch& batch) const {
    return head.forward(g, trunk.features(g, batch));
  }
  Vector q_at(const Vector& obs, const Vector& readout) const;

  nn::ParamList parameters();

  Trunk trunk;
  nn::Mlp head;
};

struct QHeads {
  QNetwork online;
  QNetwork target;  // starts as a copy; moves only through soft_update

  QHeads() = default;
  explicit QHeads(QNetwork network) : online(network), target(std::move(network)) {}
};

struct DdqnSettings {
  double gamma = 0.99;
  double tau = 0.001;
  double lr = 3e-5;
  double grad_clip = 0.03;  // 0 disables
};

struct DdqnStats {
  double loss = 0.0;
  double grad_norm = 0.0;
};

// TD loss of the batch under the online network, without updating anything.
// Targets use online argmax and target evaluation at s_{t+1}.
double ddqn_loss(const QHeads& nets, const EpisodeBatch& batch, double gamma);

// One Adam step on the online network (encoder included) followed by one soft target update.
// Throws TrainingAbort on a non-finite TD error or gradient.
DdqnStats ddqn_update(QHeads& nets, nn::AdamState& optimizer, const EpisodeBatch& batch, const DdqnSettings& cfg);

// Greedy with probability 1 - epsilon, uniform otherwise. Ties go to the lowest index.
envs::Action ddqn_act(const QNetwork& net, const Vector& obs, const Vector& readout, double epsilon, nn::Rng& rng);

}  // namespace mate::rl
