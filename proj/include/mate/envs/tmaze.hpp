#pragma once

#include "mate/envs/env.hpp"

namespace mate::envs {

enum class TMazeVariant { passive, active };

// Active start-state cue: an independent fair coin (uninformative), or the negated truth.
enum class FalseCue { random, negated };

FalseCue parse_false_cue(std::string_view name);

// Corridor cells x = 0..L on row y = 0. The oracle sits at x = 0, the junction at x = L,
// and the two goals at (L, +1) and (L, -1). Passive starts on the oracle with L = T - 1;
// active starts at x = 1 with L = T - 2 and a false cue in its first observation.
struct TMazeSpec {
  TMazeVariant variant = TMazeVariant::passive;
  std::size_t horizon = 0;
  std::size_t corridor = 0;
  FalseCue false_cue = FalseCue::random;

  static TMazeSpec from_horizon(TMazeVariant v, std::size_t horizon);
  static TMazeSpec from_corridor(TMazeVariant v, std::size_t corridor);
  void validate() const;
  int start_x() const { return variant == TMazeVariant::passive ? 0 : 1; }
  // Whether the first observation already determines the goal.
  bool informed_at_start() const { return variant == TMazeVariant::passive || false_cue == FalseCue::negated; }
};

enum TMazeAction : std::int64_t { kLeft = 0, kRight = 1, kUp = 2, kDown = 3 };

struct GridPos {
  int x = 0;
  int y = 0;
  bool operator==(const GridPos&) const = default;
};

// Goal term minus the velocity penalty (1 - dx) / L.
double tmaze_reward(int x_prev, int x_next, bool reached_goal, std::size_t corridor);

// Deterministic move rule shared by the environment and the reference-return solver.
// `t` is the number of steps already taken.
GridPos tmaze_move(const TMazeSpec& spec, GridPos pos, std::size_t t, std::int64_t action);

struct ReferenceReturns {
  double optimal = 0.0;    // goal learned on the oracle cell (or from an informative start)
  double markovian = 0.0;  // goal never known: each goal worth 1/2
  double worst = 0.0;      // lowest achievable return
};

// Exact values for the implemented dynamics, by dynamic programming over (position, time).
ReferenceReturns analytic_reference_returns(const TMazeSpec& spec);

class TMaze final : public Environment {
 public:
  explicit TMaze(TMazeSpec spec);

  std::string_view name() const override;
  std::size_t observation_dim() const override { return 3; }
  ActionSpace action_space() const override { return {ActionKind::discrete, 4}; }
  std::size_t horizon() const override { return spec_.horizon; }
  Vector reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  Vector context() const override;
  std::size_t steps() const override { return t_; }
  bool done() const override { return done_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<TMaze>(*this); }

  const TMazeSpec& spec() const { return spec_; }
  GridPos position() const { return pos_; }
  int goal() const { return goal_; }  // +1 up, -1 down
  // Fixes the goal for scripted checks; call after reset.
  void set_goal(int goal);

 private:
  Vector observe() const;

  TMazeSpec spec_;
  GridPos pos_;
  int goal_ = 1;
  int start_cue_ = 0;
  std::size_t t_ = 0;
  bool done_ = true;
};

}  // namespace mate::envs
