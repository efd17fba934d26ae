#pragma once

#include "mate/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mate::envs {

using nn::Matrix;
using nn::Vector;

enum class ActionKind { discrete, continuous };

struct ActionSpace {
  ActionKind kind = ActionKind::discrete;
  std::size_t size = 0;  // number of actions (discrete) or components (continuous)

  // Width of the action as it appears inside a transition: one-hot for discrete.
  std::size_t encoded_width() const { return size; }
};

// A discrete action uses `index`; a continuous action uses `values`.
struct Action {
  std::int64_t index = -1;
  Vector values;

  static Action discrete(std::int64_t i) { return {i, {}}; }
  static Action continuous(Vector v) { return {-1, std::move(v)}; }
};

struct StepResult {
  Vector observation;
  double reward = 0.0;
  bool done = false;
};

// One episode of a contextual MDP. The context is drawn at reset and is only
// reachable through context(), which exists for diagnostics and oracles.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string_view name() const = 0;
  virtual std::size_t observation_dim() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual std::size_t horizon() const = 0;

  virtual Vector reset(std::uint64_t seed) = 0;
  // UsageError once the episode is done; ConfigError for an action outside the action set.
  virtual StepResult step(const Action& action) = 0;
  virtual Vector context() const = 0;
  virtual std::size_t steps() const = 0;
  virtual bool done() const = 0;

  virtual std::unique_ptr<Environment> clone() const = 0;

  std::size_t transition_dim() const { return 2 * observation_dim() + action_space().encoded_width() + 1; }
};

struct EnvConfig {
  std::string name = "tmaze_passive";
  std::size_t horizon = 0;        // 0: derive from corridor_len
  std::size_t corridor_len = 0;   // T-Maze only; 0: derive from horizon
  double obs_noise = 0.5;         // gauss_bandit
  std::string false_cue = "random";  // tmaze_active

  bool operator==(const EnvConfig&) const = default;
};

// Resolves horizon / corridor length and checks the combination.
EnvConfig resolve(EnvConfig config);
std::unique_ptr<Environment> make_env(const EnvConfig& config);

struct EpisodeRecord {
  Matrix observations;  // (length + 1) x obs_dim
  Matrix actions;       // length x 1 holding the index (discrete) or length x action_dim
  Vector rewards;       // length
  std::vector<std::uint8_t> dones;  // length; only the last may be set
  ActionSpace action_space;
  Vector context;  // diagnostics only

  std::size_t length() const { return static_cast<std::size_t>(rewards.size()); }
  double episode_return() const { return rewards.sum(); }
  bool terminated() const { return !dones.empty() && dones.back() != 0; }
  // Throws DataError if the fields disagree in length or a reward is non-finite.
  void validate() const;
};

// Runs one episode to termination with a memoryless (observation, step) -> action policy.
EpisodeRecord rollout(Environment& env, std::uint64_t seed,
                      const std::function<Action(const Vector& obs, std::size_t t)>& policy);

// Writes a one-hot (discrete) or raw (continuous) action into `out`.
void encode_action(const ActionSpace& space, const Action& action, std::span<double> out);
Action action_at(const EpisodeRecord& ep, std::size_t t);

// Row t - 1 holds x_t = (o_{t-1}, a_{t-1}, r_{t-1}, o_t) for t = 1..length.
Matrix transitions(const EpisodeRecord& ep);
// The single transition vector for step t (1-based).
Vector transition_vector(const Vector& prev_obs, const ActionSpace& space, const Action& action, double reward,
                         const Vector& obs);

// Replay persistence through the checkpoint container.
void save_episodes(const std::filesystem::path& path, std::span<const EpisodeRecord> episodes);
std::vector<EpisodeRecord> load_episodes(const std::filesystem::path& path);

}  // namespace mate::envs
