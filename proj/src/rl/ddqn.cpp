#include "mate/rl/ddqn.hpp"

#include <cmath>

namespace mate::rl {

QNetwork::QNetwork(const memory::EncoderConfig& memory, std::size_t obs_dim, std::size_t actions,
                   const HeadConfig& heads, nn::Rng& rng)
    : trunk(memory, obs_dim, heads.state_dim, rng),
      head(nn::Mlp::with_hidden("q", trunk.feature_dim(), heads.hidden, actions, heads.activation,
                                nn::Activation::identity, rng)) {}

Vector QNetwork::q_at(const Vector& obs, const Vector& readout) const {
  return nn::mlp_forward(head, Matrix(trunk.features_at(obs, readout).transpose())).row(0).transpose();
}

nn::ParamList QNetwork::parameters() {
  nn::ParamList out = trunk.parameters();
  head.collect(out);
  return out;
}

namespace {

// y_t = r_t + gamma (1 - done_t) Q_target(s_{t+1}, argmax_a Q_online(s_{t+1}, a)).
Matrix td_targets(const QHeads& nets, const EpisodeBatch& batch, const Matrix& online_q, double gamma) {
  nn::Eval g;
  const Matrix target_q = nets.target.q_values(g, batch);
  Matrix y(static_cast<Eigen::Index>(batch.steps_total()), 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const auto next = batch.next_rows[static_cast<std::size_t>(i)];
    Eigen::Index best = 0;
    online_q.row(next).maxCoeff(&best);
    y(i, 0) = batch.rewards(i, 0) + gamma * batch.not_done(i, 0) * target_q(next, best);
  }
  return y;
}

}  // namespace

double ddqn_loss(const QHeads& nets, const EpisodeBatch& batch, double gamma) {
  nn::Eval g;
  const Matrix q = nets.online.q_values(g, batch);
  const Matrix y = td_targets(nets, batch, q, gamma);
  const Matrix q_taken = g.pick_cols(g.gather_rows(q, batch.now_rows), batch.discrete_actions);
  return (q_taken - y).array().square().mean();
}

DdqnStats ddqn_update(QHeads& nets, nn::AdamState& optimizer, const EpisodeBatch& batch, const DdqnSettings& cfg) {
  if (batch.discrete_actions.size() != batch.steps_total()) {
    throw UsageError("ddqn_update: batch has no discrete actions");
  }
  nn::Tape tape;
  const auto q = nets.online.q_values(tape, batch);
  const Matrix y = td_targets(nets, batch, tape.value(q), cfg.gamma);
  const auto q_taken = tape.pick_cols(tape.gather_rows(q, batch.now_rows), batch.discrete_actions);
  const auto err = tape.sub(q_taken, tape.input(y));
  const auto sq = tape.square(err);
  check_finite_steps(tape.value(sq), batch, "squared TD error");
  const auto loss = tape.mean(sq);
  tape.backward(loss);

  nn::ParamList params = nets.online.parameters();
  nn::Gradients grads = tape.gradients(params);
  DdqnStats stats;
  stats.loss = tape.value(loss)(0, 0);
  stats.grad_norm = cfg.grad_clip > 0.0 ? nn::clip_gradients(grads, cfg.grad_clip) : nn::global_norm(grads);
  if (!std::isfinite(stats.grad_norm)) {
    throw TrainingAbort("DDQN gradient norm is non-finite", describe_episode(batch, 0));
  }
  nn::adam_step(optimizer, params, grads, cfg.lr);
  nn::ParamList target = nets.target.parameters();
  soft_update(target, params, cfg.tau);
  return stats;
}

envs::Action ddqn_act(const QNetwork& net, const Vector& obs, const Vector& readout, double epsilon, nn::Rng& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<std::int64_t> pick(0, static_cast<std::int64_t>(net.actions()) - 1);
    return envs::Action::discrete(pick(rng));
  }
  Eigen::Index best = 0;
  net.q_at(obs, readout).maxCoeff(&best);
  return envs::Action::discrete(best);
}

}  // namespace mate::rl
