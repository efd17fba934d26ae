#include "mate/rl/networks.hpp"

#include <cmath>
#include <sstream>

namespace mate::rl {

EpisodeBatch make_batch(std::vector<envs::EpisodeRecord> episodes) {
  if (episodes.empty()) throw UsageError("make_batch: no episodes");
  EpisodeBatch b;
  std::vector<std::size_t> lengths;
  std::size_t n = 0;
  for (const auto& ep : episodes) {
    ep.validate();
    if (ep.length() == 0) throw UsageError("make_batch: empty episode");
    lengths.push_back(ep.length());
    n += ep.length();
  }
  const auto& first = episodes.front();
  const auto obs_dim = first.observations.cols();
  const envs::ActionSpace space = first.action_space;
  const auto width = static_cast<Eigen::Index>(2 * obs_dim + space.encoded_width() + 1);
  const auto rows = static_cast<Eigen::Index>(n);
  const auto episodes_count = static_cast<Eigen::Index>(episodes.size());

  b.steps = nn::Segments::from_lengths(lengths);
  b.transitions.resize(rows, width);
  b.observations.resize(rows + episodes_count, obs_dim);
  b.rewards.resize(rows, 1);
  b.not_done.resize(rows, 1);
  if (space.kind == envs::ActionKind::continuous) {
    b.continuous_actions.resize(rows, static_cast<Eigen::Index>(space.size));
  }
  b.memory_rows.reserve(n + episodes.size());
  b.now_rows.reserve(n);
  b.next_rows.reserve(n);

  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const auto& ep = episodes[e];
    if (ep.observations.cols() != obs_dim || ep.action_space.kind != space.kind || ep.action_space.size != space.size) {
      throw UsageError("make_batch: episodes come from different environments");
    }
    const auto begin = static_cast<Eigen::Index>(b.steps.begin(e));
    const auto len = static_cast<Eigen::Index>(ep.length());
    const Eigen::Index obs_begin = begin + static_cast<Eigen::Index>(e);
    b.transitions.middleRows(begin, len) = envs::transitions(ep);
    b.observations.middleRows(obs_begin, len + 1) = ep.observations;
    for (Eigen::Index t = 0; t <= len; ++t) b.memory_rows.push_back(t == 0 ? 0 : 1 + begin + t - 1);
    for (Eigen::Index t = 0; t < len; ++t) {
      b.now_rows.push_back(obs_begin + t);
      b.next_rows.push_back(obs_begin + t + 1);
      b.rewards(begin + t, 0) = ep.rewards(t);
      b.not_done(begin + t, 0) = ep.dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
      b.episode_of_step.push_back(e);
      if (space.kind == envs::ActionKind::discrete) {
        b.discrete_actions.push_back(static_cast<std::int64_t>(ep.actions(t, 0)));
      } else {
        b.continuous_actions.row(begin + t) = ep.actions.row(t);
      }
    }
  }
  b.source = std::move(episodes);
  return b;
}

std::string describe_episode(const EpisodeBatch& batch, std::size_t episode) {
  const auto& ep = batch.source.at(episode);
  const Eigen::IOFormat row_fmt(Eigen::FullPrecision, Eigen::DontAlignCols, " ", "\n", "", "", "", "");
  std::ostringstream os;
  os << "episode " << episode << " of " << batch.episodes() << ", length " << ep.length() << "\n";
  os << "context: " << ep.context.transpose().format(row_fmt) << "\n";
  os << "observations:\n" << ep.observations.format(row_fmt) << "\n";
  os << "actions:\n" << ep.actions.format(row_fmt) << "\n";
  os << "rewards: " << ep.rewards.transpose().format(row_fmt) << "\n";
  return os.str();
}

void check_finite_steps(const Matrix& values, const EpisodeBatch& batch, const std::string& what) {
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    if (!values.row(i).allFinite()) {
      const std::size_t e = batch.episode_of_step.at(static_cast<std::size_t>(i));
      throw TrainingAbort(what + " is non-finite at batch step " + std::to_string(i) + " (episode " +
                              std::to_string(e) + ")",
                          describe_episode(batch, e));
    }
  }
}

StateEmbedding::StateEmbedding(std::size_t obs_dim, std::size_t dim, nn::Rng& rng)
    : proj("state", obs_dim, dim, rng), offset("state/offset", memory::random_unit_offset(dim, rng)) {
  if (dim == 0) throw ConfigError("train.state_dim must be positive");
}

double StateEmbedding::scale() const { return std::sqrt(static_cast<double>(dim())); }

Trunk::Trunk(const memory::EncoderConfig& memory_config, std::size_t obs_dim, std::size_t state_dim, nn::Rng& rng)
    : memory(memory_config, rng), state(obs_dim, state_dim, rng) {}

Vector Trunk::features_at(const Vector& obs, const Vector& readout) const {
  nn::Eval g;
  const Matrix s = state(g, Matrix(obs.transpose()));
  Vector out(static_cast<Eigen::Index>(feature_dim()));
  out << s.row(0).transpose(), readout;
  return out;
}

nn::ParamList Trunk::parameters() {
  nn::ParamList out = memory.parameters();
  state.collect(out);
  return out;
}

envs::EpisodeRecord collect_episode(envs::Environment& env, std::uint64_t seed, const memory::MemoryEncoder& memory,
                                    const ActionChooser& choose, Matrix* readouts) {
  const envs::ActionSpace space = env.action_space();
  const auto width = space.kind == envs::ActionKind::discrete ? 1 : static_cast<Eigen::Index>(space.size);
  const auto T = static_cast<Eigen::Index>(env.horizon());
  const auto m = static_cast<Eigen::Index>(memory.readout_dim());
  envs::EpisodeRecord ep;
  ep.action_space = space;
  ep.observations.resize(T + 1, static_cast<Eigen::Index>(env.observation_dim()));
  ep.actions.resize(T, width);
  ep.rewards.resize(T);
  ep.observations.row(0) = env.reset(seed).transpose();
  ep.context = env.context();
  if (readouts) readouts->resize(T + 1, m);

  auto state = memory.initial_state();
  Vector readout = memory.initial_readout();
  Eigen::Index t = 0;
  while (!env.done()) {
    if (readouts) readouts->row(t) = readout.transpose();
    const Vector obs = ep.observations.row(t).transpose();
    const envs::Action a = choose(obs, readout, static_cast<std::size_t>(t));
    const envs::StepResult r = env.step(a);
    if (space.kind == envs::ActionKind::discrete) ep.actions(t, 0) = static_cast<double>(a.index);
    else ep.actions.row(t) = a.values.transpose();
    ep.rewards(t) = r.reward;
    ep.dones.push_back(r.done ? 1 : 0);
    ++t;
    ep.observations.row(t) = r.observation.transpose();
    const Vector x = envs::transition_vector(obs, space, a, r.reward, r.observation);
    readout = memory.encode_step(state, std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }
  if (readouts) {
    readouts->row(t) = readout.transpose();
    readouts->conservativeResize(t + 1, Eigen::NoChange);
  }
  ep.observations.conservativeResize(t + 1, Eigen::NoChange);
  ep.actions.conservativeResize(t, Eigen::NoChange);
  ep.rewards.conservativeResize(t);
  return ep;
}

void soft_update(std::span<nn::Parameter* const> target, std::span<nn::Parameter* const> online, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw UsageError("soft_update: tau must lie in [0, 1], got " + std::to_string(tau));
  if (target.size() != online.size()) throw UsageError("soft_update: parameter count mismatch");
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& t = target[i]->value;
    const auto& o = online[i]->value;
    if (t.rows() != o.rows() || t.cols() != o.cols()) {
      throw UsageError("soft_update: shape mismatch for " + target[i]->name);
    }
    t += tau * (o - t);
  }
}

double epsilon_schedule(std::size_t episode, std::size_t total_episodes, std::size_t horizon, double decay_fraction) {
  if (total_episodes == 0) throw UsageError("epsilon_schedule: total_episodes must be positive");
  if (horizon == 0) throw UsageError("epsilon_schedule: horizon must be positive");
  const double floor = 1.0 / static_cast<double>(horizon);
  const double span = decay_fraction * static_cast<double>(total_episodes);
  const double progress = static_cast<double>(episode);
  if (progress >= span) return floor;
  return 1.0 + (floor - 1.0) * progress / span;
}

}  // namespace mate::rl
