#pragma once

#include "mate/envs/env.hpp"
#include "mate/errors.hpp"
#include "mate/memory/encoder.hpp"
#include "mate/nn/layers.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mate::rl {

using nn::Matrix;
using nn::Vector;

// A replay sample packed for one update. Episode e with L steps owns L rows of
// `transitions` and L + 1 rows of `observations` (times 0..L).
struct EpisodeBatch {
  Matrix transitions;
  Matrix observations;
  nn::Segments steps;
  // For each observation row, the row of [initial readout ; per-transition readouts].
  std::vector<std::int64_t> memory_rows;
  // Observation rows of s_t and s_{t+1} for every step.
  std::vector<std::int64_t> now_rows;
  std::vector<std::int64_t> next_rows;
  std::vector<std::int64_t> discrete_actions;
  Matrix continuous_actions;
  Matrix rewards;   // N x 1
  Matrix not_done;  // N x 1
  std::vector<std::size_t> episode_of_step;
  std::vector<envs::EpisodeRecord> source;

  std::size_t steps_total() const { return steps.total(); }
  std::size_t episodes() const { return steps.count(); }
};

EpisodeBatch make_batch(std::vector<envs::EpisodeRecord> episodes);

// Human-readable dump of one batch episode for abort diagnostics.
std::string describe_episode(const EpisodeBatch& batch, std::size_t episode);

// Raised when a loss or gradient goes non-finite. `dump` describes the offending episode.
class TrainingAbort : public NumericError {
 public:
  TrainingAbort(const std::string& what, std::string dump) : NumericError(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

// Throws TrainingAbort when `values` (one row per step) holds a non-finite entry.
void check_finite_steps(const Matrix& values, const EpisodeBatch& batch, const std::string& what);

// Linear projection of the observation onto a hypersphere with a trainable offset.
struct StateEmbedding {
  nn::Linear proj;
  nn::Parameter offset;

  StateEmbedding() = default;
  StateEmbedding(std::size_t obs_dim, std::size_t dim, nn::Rng& rng);

  std::size_t dim() const { return proj.out_dim(); }
  double scale() const;

  template <typename G>
  typename G::Value operator()(G& g, const typename G::Value& obs) const {
    return g.row_normalize(g.add_param_row(proj(g, obs), offset), scale());
  }

  void collect(nn::ParamList& out) {
    proj.collect(out);
    out.push_back(&offset);
  }
};

// Memory encoder plus state embedding. Heads read [state embedding, memory readout].
class Trunk {
 public:
  Trunk() = default;
  Trunk(const memory::EncoderConfig& memory, std::size_t obs_dim, std::size_t state_dim, nn::Rng& rng);

  std::size_t feature_dim() const { return state.dim() + memory.readout_dim(); }

  // One feature row per observation row of the batch.
  template <typename G>
  typename G::Value features(G& g, const EpisodeBatch& batch) const {
    auto s = state(g, g.input(batch.observations));
    if (memory.readout_dim() == 0) return s;
    auto table = g.concat_rows({memory.initial_readout(g), memory.encode_sequence(g, batch.transitions, batch.steps)});
    return g.concat_cols({s, g.gather_rows(table, batch.memory_rows)});
  }

  Vector features_at(const Vector& obs, const Vector& readout) const;

  nn::ParamList parameters();

  memory::MemoryEncoder memory;
  StateEmbedding state;
};

// Size knobs shared by the heads.
struct HeadConfig {
  std::vector<std::size_t> hidden{256, 256};
  std::size_t state_dim = 32;
  nn::Activation activation = nn::Activation::relu;

  bool operator==(const HeadConfig&) const = default;
};

// Rollout: steps the environment to termination, feeding each transition to the
// encoder incrementally. `choose` sees the observation and the readout for step t.
// When `readouts` is given it receives the (length + 1) readouts in order.
using ActionChooser = std::function<envs::Action(const Vector& obs, const Vector& readout, std::size_t t)>;
envs::EpisodeRecord collect_episode(envs::Environment& env, std::uint64_t seed, const memory::MemoryEncoder& memory,
                                    const ActionChooser& choose, Matrix* readouts = nullptr);

// target <- (1 - tau) target + tau online. UsageError on count/shape mismatch or tau outside [0, 1].
void soft_update(std::span<nn::Parameter* const> target, std::span<nn::Parameter* const> online, double tau);

// 1.0 at episode 0, linear to 1/T at 10% of the budget, flat afterwards.
double epsilon_schedule(std::size_t episode, std::size_t total_episodes, std::size_t horizon,
                        double decay_fraction = 0.1);

}  // namespace mate::rl
