#include "mate/envs/env.hpp"

#include "mate/envs/continuous.hpp"
#include "mate/envs/tmaze.hpp"
#include "mate/errors.hpp"
#include "mate/nn/checkpoint.hpp"

#include <cmath>

namespace mate::envs {

namespace {

bool is_tmaze(const std::string& name) { return name == "tmaze_passive" || name == "tmaze_active"; }

}  // namespace

EnvConfig resolve(EnvConfig config) {
  if (is_tmaze(config.name)) {
    const auto variant = config.name == "tmaze_passive" ? TMazeVariant::passive : TMazeVariant::active;
    const std::size_t extra = variant == TMazeVariant::passive ? 1 : 2;
    if (config.horizon == 0 && config.corridor_len == 0) config.corridor_len = 10;
    if (config.corridor_len == 0) {
      if (config.horizon <= extra) throw ConfigError("env.horizon too short for " + config.name);
      config.corridor_len = config.horizon - extra;
    }
    if (config.horizon == 0) config.horizon = config.corridor_len + extra;
    if (config.horizon != config.corridor_len + extra) {
      throw ConfigError("env.horizon " + std::to_string(config.horizon) + " and env.corridor_len " +
                        std::to_string(config.corridor_len) + " disagree for " + config.name);
    }
    TMazeSpec{variant, config.horizon, config.corridor_len, parse_false_cue(config.false_cue)}.validate();
    return config;
  }
  if (config.name != "gauss_bandit" && config.name != "point_dir") {
    throw ConfigError("env.name: unknown environment '" + config.name +
                      "' (expected tmaze_passive, tmaze_active, gauss_bandit, point_dir)");
  }
  if (config.corridor_len != 0) throw ConfigError("env.corridor_len only applies to T-Maze environments");
  if (config.horizon == 0) config.horizon = config.name == "gauss_bandit" ? 32 : 100;
  if (!(config.obs_noise > 0.0)) throw ConfigError("env.obs_noise must be positive");
  return config;
}

std::unique_ptr<Environment> make_env(const EnvConfig& raw) {
  const EnvConfig c = resolve(raw);
  if (c.name == "tmaze_passive" || c.name == "tmaze_active") {
    auto spec = TMazeSpec::from_corridor(c.name == "tmaze_passive" ? TMazeVariant::passive : TMazeVariant::active,
                                         c.corridor_len);
    spec.false_cue = parse_false_cue(c.false_cue);
    return std::make_unique<TMaze>(spec);
  }
  if (c.name == "gauss_bandit") return std::make_unique<GaussBandit>(c.horizon, c.obs_noise);
  return std::make_unique<PointDir>(c.horizon);
}

void EpisodeRecord::validate() const {
  const auto len = static_cast<Eigen::Index>(rewards.size());
  if (observations.rows() != len + 1) throw DataError("episode: observations must have length + 1 rows");
  if (actions.rows() != len) throw DataError("episode: actions must have one row per step");
  if (dones.size() != static_cast<std::size_t>(len)) throw DataError("episode: done flags must have one per step");
  for (std::size_t i = 0; i + 1 < dones.size(); ++i) {
    if (dones[i]) throw DataError("episode: terminal flag before the last step");
  }
  if (!rewards.allFinite()) throw DataError("episode: non-finite reward");
  if (!observations.allFinite()) throw DataError("episode: non-finite observation");
}

EpisodeRecord rollout(Environment& env, std::uint64_t seed,
                      const std::function<Action(const Vector& obs, std::size_t t)>& policy) {
  const ActionSpace space = env.action_space();
  const auto width = space.kind == ActionKind::discrete ? 1 : static_cast<Eigen::Index>(space.size);
  const auto T = static_cast<Eigen::Index>(env.horizon());
  EpisodeRecord ep;
  ep.action_space = space;
  ep.observations.resize(T + 1, static_cast<Eigen::Index>(env.observation_dim()));
  ep.actions.resize(T, width);
  ep.rewards.resize(T);
  ep.observations.row(0) = env.reset(seed).transpose();
  ep.context = env.context();
  Eigen::Index t = 0;
  while (!env.done()) {
    const Action a = policy(ep.observations.row(t).transpose(), static_cast<std::size_t>(t));
    const StepResult r = env.step(a);
    if (space.kind == ActionKind::discrete) ep.actions(t, 0) = static_cast<double>(a.index);
    else ep.actions.row(t) = a.values.transpose();
    ep.rewards(t) = r.reward;
    ep.dones.push_back(r.done ? 1 : 0);
    ++t;
    ep.observations.row(t) = r.observation.transpose();
  }
  ep.observations.conservativeResize(t + 1, Eigen::NoChange);
  ep.actions.conservativeResize(t, Eigen::NoChange);
  ep.rewards.conservativeResize(t);
  return ep;
}

void encode_action(const ActionSpace& space, const Action& action, std::span<double> out) {
  if (out.size() != space.encoded_width()) throw UsageError("encode_action: output width mismatch");
  if (space.kind == ActionKind::discrete) {
    if (action.index < 0 || static_cast<std::size_t>(action.index) >= space.size) {
      throw ConfigError("action index " + std::to_string(action.index) + " outside 0.." +
                        std::to_string(space.size - 1));
    }
    std::fill(out.begin(), out.end(), 0.0);
    out[static_cast<std::size_t>(action.index)] = 1.0;
    return;
  }
  if (static_cast<std::size_t>(action.values.size()) != space.size) {
    throw ConfigError("continuous action has " + std::to_string(action.values.size()) + " components, expected " +
                      std::to_string(space.size));
  }
  for (std::size_t i = 0; i < space.size; ++i) out[i] = action.values(static_cast<Eigen::Index>(i));
}

Action action_at(const EpisodeRecord& ep, std::size_t t) {
  const auto r = static_cast<Eigen::Index>(t);
  if (ep.action_space.kind == ActionKind::discrete) return Action::discrete(std::llround(ep.actions(r, 0)));
  return Action::continuous(ep.actions.row(r).transpose());
}

Vector transition_vector(const Vector& prev_obs, const ActionSpace& space, const Action& action, double reward,
                         const Vector& obs) {
  const auto ds = prev_obs.size();
  const auto da = static_cast<Eigen::Index>(space.encoded_width());
  Vector x(2 * ds + da + 1);
  x.head(ds) = prev_obs;
  encode_action(space, action, std::span<double>(x.data() + ds, static_cast<std::size_t>(da)));
  x(ds + da) = reward;
  x.tail(ds) = obs;
  return x;
}

Matrix transitions(const EpisodeRecord& ep) {
  const auto len = static_cast<Eigen::Index>(ep.length());
  const auto ds = ep.observations.cols();
  const auto n = 2 * ds + static_cast<Eigen::Index>(ep.action_space.encoded_width()) + 1;
  Matrix xs(len, n);
  for (Eigen::Index t = 0; t < len; ++t) {
    xs.row(t) = transition_vector(ep.observations.row(t).transpose(), ep.action_space,
                                  action_at(ep, static_cast<std::size_t>(t)), ep.rewards(t),
                                  ep.observations.row(t + 1).transpose())
                    .transpose();
  }
  return xs;
}

void save_episodes(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes) {
  nn::TensorList out;
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    ep.validate();
    const std::string p = "ep" + std::to_string(i) + "/";
    Matrix flags(1, static_cast<Eigen::Index>(ep.dones.size()));
    for (std::size_t k = 0; k < ep.dones.size(); ++k) flags(0, static_cast<Eigen::Index>(k)) = ep.dones[k];
    Matrix space(1, 2);
    space << (ep.action_space.kind == ActionKind::discrete ? 0.0 : 1.0), static_cast<double>(ep.action_space.size);
    out.push_back({p + "obs", nn::Tensor::from_matrix(ep.observations)});
    out.push_back({p + "act", nn::Tensor::from_matrix(ep.actions)});
    out.push_back({p + "rew", nn::Tensor({static_cast<std::uint64_t>(ep.rewards.size())},
                                         std::vector<double>(ep.rewards.data(), ep.rewards.data() + ep.rewards.size()))});
    out.push_back({p + "done", nn::Tensor::from_matrix(flags)});
    out.push_back({p + "space", nn::Tensor::from_matrix(space)});
    out.push_back({p + "ctx", nn::Tensor({static_cast<std::uint64_t>(ep.context.size())},
                                         std::vector<double>(ep.context.data(), ep.context.data() + ep.context.size()))});
  }
  nn::write_checkpoint(path, out);
}

std::vector<EpisodeRecord> load_episodes(const std::filesystem::path& path) {
  const auto tensors = nn::read_checkpoint(path);
  if (tensors.size() % 6 != 0) throw DataError(path.string() + ": not an episode file");
  std::vector<EpisodeRecord> out;
  for (std::size_t i = 0; i < tensors.size(); i += 6) {
    const std::string p = "ep" + std::to_string(out.size()) + "/";
    const char* fields[] = {"obs", "act", "rew", "done", "space", "ctx"};
    for (std::size_t k = 0; k < 6; ++k) {
      if (tensors[i + k].name != p + fields[k]) {
        throw DataError(path.string() + ": expected tensor '" + p + fields[k] + "', found '" + tensors[i + k].name + "'");
      }
    }
    EpisodeRecord ep;
    ep.observations = tensors[i].tensor.to_matrix();
    ep.actions = tensors[i + 1].tensor.to_matrix();
    const auto& rew = tensors[i + 2].tensor.values;
    ep.rewards = Eigen::Map<const Vector>(rew.data(), static_cast<Eigen::Index>(rew.size()));
    for (double f : tensors[i + 3].tensor.values) ep.dones.push_back(f != 0.0 ? 1 : 0);
    const auto& sp = tensors[i + 4].tensor.values;
    if (sp.size() != 2) throw DataError(path.string() + ": malformed action space for " + p);
    ep.action_space = {sp[0] == 0.0 ? ActionKind::discrete : ActionKind::continuous, static_cast<std::size_t>(sp[1])};
    const auto& ctx = tensors[i + 5].tensor.values;
    ep.context = Eigen::Map<const Vector>(ctx.data(), static_cast<Eigen::Index>(ctx.size()));
    if (ep.actions.rows() == 0) ep.actions.resize(0, ep.action_space.kind == ActionKind::discrete ? 1 : static_cast<Eigen::Index>(ep.action_space.size));
    ep.validate();
    out.push_back(std::move(ep));
  }
  return out;
}

}  // namespace mate::envs
