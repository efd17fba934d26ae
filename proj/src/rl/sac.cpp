#include "mate/rl/sac.hpp"

#include <cmath>

namespace mate::rl {

SacNetwork::SacNetwork(const memory::EncoderConfig& memory, std::size_t obs_dim, std::size_t action_dim,
                       const HeadConfig& heads, nn::Rng& rng)
    : trunk(memory, obs_dim, heads.state_dim, rng), action_dim_(action_dim) {
  if (action_dim == 0) throw ConfigError("SAC needs a continuous action space");
  const std::size_t f = trunk.feature_dim();
  actor = nn::Mlp::with_hidden("actor", f, heads.hidden, 2 * action_dim, heads.activation, nn::Activation::identity,
                               rng);
  critic1 = nn::Mlp::with_hidden("critic1", f + action_dim, heads.hidden, 1, heads.activation,
                                 nn::Activation::identity, rng);
  critic2 = nn::Mlp::with_hidden("critic2", f + action_dim, heads.hidden, 1, heads.activation,
                                 nn::Activation::identity, rng);
}

nn::ParamList SacNetwork::critic_parameters() {
  nn::ParamList out = trunk.parameters();
  critic1.collect(out);
  critic2.collect(out);
  return out;
}

nn::ParamList SacNetwork::actor_parameters() {
  nn::ParamList out;
  actor.collect(out);
  return out;
}

nn::ParamList SacNetwork::parameters() {
  nn::ParamList out = critic_parameters();
  actor.collect(out);
  return out;
}

SacHeads::SacHeads(SacNetwork network, double alpha_) : online(network), target(std::move(network)), alpha(alpha_) {
  if (!(alpha > 0.0)) throw ConfigError("train.alpha must be positive");
}

SacOptimizers::SacOptimizers(SacNetwork& net)
    : critic(net.critic_parameters()), actor(net.actor_parameters()), joint(net.parameters()) {}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, nn::Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

namespace {

void require_continuous(const EpisodeBatch& batch, const SacNetwork& net) {
  if (batch.continuous_actions.rows() != static_cast<Eigen::Index>(batch.steps_total()) ||
      batch.continuous_actions.cols() != static_cast<Eigen::Index>(net.action_dim())) {
    throw UsageError("SAC update needs continuous actions of width " + std::to_string(net.action_dim()));
  }
}

double apply(nn::Tape& tape, nn::Tape::Var loss, nn::ParamList params, nn::AdamState& opt, double lr, double clip,
             const EpisodeBatch& batch, const char* what) {
  tape.backward(loss);
  nn::Gradients grads = tape.gradients(params);
  const double norm = clip > 0.0 ? nn::clip_gradients(grads, clip) : nn::global_norm(grads);
  if (!std::isfinite(norm)) throw TrainingAbort(std::string(what) + " gradient is non-finite", describe_episode(batch, 0));
  nn::adam_step(opt, params, grads, lr);
  return tape.value(loss)(0, 0);
}

}  // namespace

double sac_critic_step(SacHeads& nets, SacOptimizers& opt, const EpisodeBatch& batch, const SacSettings& cfg,
                       nn::Rng& rng) {
  require_continuous(batch, nets.online);
  const auto n = static_cast<Eigen::Index>(batch.steps_total());

  Matrix y;
  {
    nn::Eval g;
    const Matrix next_online = g.gather_rows(nets.online.trunk.features(g, batch), batch.next_rows);
    const auto next = sample_policy(g, nets.online.actor, next_online,
                                    standard_normal(n, static_cast<Eigen::Index>(nets.online.action_dim()), rng));
    const Matrix next_target = g.gather_rows(nets.target.trunk.features(g, batch), batch.next_rows);
    const Matrix q_next = twin_min(g, nets.target, next_target, next.action);
    y = batch.rewards.array() + cfg.gamma * batch.not_done.array() * (q_next - nets.alpha * next.log_prob).array();
  }

  nn::Tape tape;
  const auto now = tape.gather_rows(nets.online.trunk.features(tape, batch), batch.now_rows);
  const auto in = tape.concat_cols({now, tape.input(batch.continuous_actions)});
  const auto target = tape.input(y);
  const auto e1 = tape.sub(nets.online.critic1.forward(tape, in), target);
  const auto e2 = tape.sub(nets.online.critic2.forward(tape, in), target);
  const auto sq1 = tape.square(e1);
  const auto sq2 = tape.square(e2);
  check_finite_steps(tape.value(sq1), batch, "critic 1 squared TD error");
  check_finite_steps(tape.value(sq2), batch, "critic 2 squared TD error");
  const auto loss = tape.add(tape.mean(sq1), tape.mean(sq2));
  const double value =
      apply(tape, loss, nets.online.critic_parameters(), opt.critic, cfg.lr, cfg.grad_clip, batch, "critic");

  nn::ParamList target_params = nets.target.critic_parameters();
  nn::ParamList online_params = nets.online.critic_parameters();
  soft_update(target_params, online_params, cfg.tau);
  return value;
}

namespace {

template <typename G>
typename G::Value actor_objective(G& g, const SacHeads& nets, const typename G::Value& features, const Matrix& noise) {
  const auto pi = sample_policy(g, nets.online.actor, features, noise);
  const auto q = twin_min(g, nets.online, features, pi.action);
  return g.mean(g.sub(g.scale(pi.log_prob, nets.alpha), q));
}

}  // namespace

double sac_actor_loss(const SacHeads& nets, const EpisodeBatch& batch, const Matrix& noise) {
  nn::Eval g;
  const Matrix features = g.gather_rows(nets.online.trunk.features(g, batch), batch.now_rows);
  return actor_objective(g, nets, features, noise)(0, 0);
}

double sac_actor_step(SacHeads& nets, SacOptimizers& opt, const EpisodeBatch& batch, const SacSettings& cfg,
                      nn::Rng& rng) {
  require_continuous(batch, nets.online);
  const Matrix noise =
      standard_normal(static_cast<Eigen::Index>(batch.steps_total()), static_cast<Eigen::Index>(nets.online.action_dim()), rng);
  nn::Tape tape;
  if (cfg.freeze_critic) {
    // Stop-gradient on the memory features; critics act as fixed evaluators.
    nn::Eval ev;
    const Matrix features = ev.gather_rows(nets.online.trunk.features(ev, batch), batch.now_rows);
    const auto loss = actor_objective(tape, nets, tape.input(features), noise);
    return apply(tape, loss, nets.online.actor_parameters(), opt.actor, cfg.lr, cfg.grad_clip, batch, "actor");
  }
  const auto features = tape.gather_rows(nets.online.trunk.features(tape, batch), batch.now_rows);
  const auto loss = actor_objective(tape, nets, features, noise);
  return apply(tape, loss, nets.online.parameters(), opt.joint, cfg.lr, cfg.grad_clip, batch, "actor");
}

SacStats sac_update(SacHeads& nets, SacOptimizers& opt, const EpisodeBatch& batch, const SacSettings& cfg,
                    nn::Rng& rng) {
  SacStats s;
  s.critic_loss = sac_critic_step(nets, opt, batch, cfg, rng);
  s.actor_loss = sac_actor_step(nets, opt, batch, cfg, rng);
  return s;
}

envs::Action sac_act(const SacNetwork& net, const Vector& obs, const Vector& readout, bool deterministic,
                     nn::Rng& rng) {
  nn::Eval g;
  const Matrix features = net.trunk.features_at(obs, readout).transpose();
  const auto d = static_cast<Eigen::Index>(net.action_dim());
  if (deterministic) {
    const Matrix out = net.actor.forward(g, features);
    return envs::Action::continuous(out.leftCols(d).array().tanh().matrix().row(0).transpose());
  }
  const auto pi = sample_policy(g, net.actor, features, standard_normal(1, d, rng));
  return envs::Action::continuous(pi.action.row(0).transpose());
}

}  // namespace mate::rl
