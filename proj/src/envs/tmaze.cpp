#include "mate/envs/tmaze.hpp"

#include "mate/errors.hpp"

#include <algorithm>
#include <functional>
#include <random>

namespace mate::envs {

FalseCue parse_false_cue(std::string_view name) {
  if (name == "random") return FalseCue::random;
  if (name == "negated") return FalseCue::negated;
  throw ConfigError("env.false_cue: unknown mode '" + std::string(name) + "' (expected random, negated)");
}

TMazeSpec TMazeSpec::from_horizon(TMazeVariant v, std::size_t horizon) {
  const std::size_t extra = v == TMazeVariant::passive ? 1 : 2;
  if (horizon <= extra) throw ConfigError("T-Maze horizon " + std::to_string(horizon) + " is too short");
  TMazeSpec s{v, horizon, horizon - extra, FalseCue::random};
  s.validate();
  return s;
}

TMazeSpec TMazeSpec::from_corridor(TMazeVariant v, std::size_t corridor) {
  TMazeSpec s{v, corridor + (v == TMazeVariant::passive ? 1 : 2), corridor, FalseCue::random};
  s.validate();
  return s;
}

void TMazeSpec::validate() const {
  if (corridor < 2) throw ConfigError("env.corridor_len must be at least 2, got " + std::to_string(corridor));
  const std::size_t extra = variant == TMazeVariant::passive ? 1 : 2;
  if (horizon != corridor + extra) {
    throw ConfigError("T-Maze horizon " + std::to_string(horizon) + " does not match corridor " +
                      std::to_string(corridor));
  }
}

double tmaze_reward(int x_prev, int x_next, bool reached_goal, std::size_t corridor) {
  const double goal = reached_goal ? 1.0 : 0.0;
  return goal - (1.0 - static_cast<double>(x_next - x_prev)) / static_cast<double>(corridor);
}

GridPos tmaze_move(const TMazeSpec& spec, GridPos pos, std::size_t t, std::int64_t action) {
  const int L = static_cast<int>(spec.corridor);
  if (action < kLeft || action > kDown) throw ConfigError("T-Maze action " + std::to_string(action) + " outside 0..3");
  if (pos.y != 0) return pos;
  switch (action) {
    case kLeft:
      if (pos.x > 0) --pos.x;
      break;
    case kRight:
      // Active variant: the first step towards the junction is blocked.
      if (spec.variant == TMazeVariant::active && t == 0) break;
      if (pos.x < L) ++pos.x;
      break;
    case kUp:
      if (pos.x == L) pos.y = 1;
      break;
    default:
      if (pos.x == L) pos.y = -1;
      break;
  }
  return pos;
}

ReferenceReturns analytic_reference_returns(const TMazeSpec& spec) {
  spec.validate();
  const int L = static_cast<int>(spec.corridor);
  const std::size_t T = spec.horizon;
  const std::size_t cells = static_cast<std::size_t>(L + 1);
  // Backward induction over (step, x, informed); goal cells are terminal. An informed agent
  // picks the true goal (worth `informed_goal`), an uninformed one gets `blind_goal` either way.
  auto solve = [&](bool can_learn, bool start_informed, double informed_goal, double blind_goal, bool maximise) {
    std::vector<double> next(2 * cells, 0.0);
    for (std::size_t t = T; t-- > 0;) {
      std::vector<double> cur(2 * cells);
      for (int informed = 0; informed < 2; ++informed) {
        for (int x = 0; x <= L; ++x) {
          bool first = true;
          double best = 0.0;
          for (std::int64_t a = kLeft; a <= kDown; ++a) {
            const GridPos to = tmaze_move(spec, {x, 0}, t, a);
            double v = -(1.0 - static_cast<double>(to.x - x)) / static_cast<double>(L);
            if (to.y != 0) {
              v += informed ? informed_goal : blind_goal;
            } else {
              const int learns = informed || (can_learn && to.x == 0) ? 1 : 0;
              v += next[static_cast<std::size_t>(learns) * cells + static_cast<std::size_t>(to.x)];
            }
            if (first || (maximise ? v > best : v < best)) best = v;
            first = false;
          }
          cur[static_cast<std::size_t>(informed) * cells + static_cast<std::size_t>(x)] = best;
        }
      }
      next = std::move(cur);
    }
    return next[(start_informed ? cells : 0) + static_cast<std::size_t>(spec.start_x())];
  };
  ReferenceReturns r;
  r.optimal = solve(true, spec.informed_at_start(), 1.0, 0.5, true);
  r.markovian = solve(false, false, 1.0, 0.5, true);
  // Worst case: the adversary knows the goal and may end on the wrong one.
  r.worst = solve(false, true, 0.0, 0.0, false);
  return r;
}

TMaze::TMaze(TMazeSpec spec) : spec_(spec) { spec_.validate(); }

std::string_view TMaze::name() const {
  return spec_.variant == TMazeVariant::passive ? "tmaze_passive" : "tmaze_active";
}

Vector TMaze::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  goal_ = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
  const int coin = std::bernoulli_distribution(0.5)(rng) ? 1 : -1;
  start_cue_ = spec_.false_cue == FalseCue::negated ? -goal_ : coin;
  pos_ = {spec_.start_x(), 0};
  t_ = 0;
  done_ = false;
  return observe();
}

void TMaze::set_goal(int goal) {
  if (goal != 1 && goal != -1) throw UsageError("T-Maze goal must be +1 or -1");
  goal_ = goal;
  if (spec_.false_cue == FalseCue::negated) start_cue_ = -goal_;
}

Vector TMaze::context() const {
  Vector c(1);
  c << goal_;
  return c;
}

Vector TMaze::observe() const {
  double cue = 0.0;
  if (pos_.x == 0 && pos_.y == 0) cue = goal_;
  if (spec_.variant == TMazeVariant::active && t_ == 0) cue = start_cue_;
  Vector o(3);
  o << static_cast<double>(pos_.x) / static_cast<double>(spec_.corridor), pos_.y, cue;
  return o;
}

StepResult TMaze::step(const Action& action) {
  if (done_) throw UsageError("step on a finished T-Maze episode");
  const GridPos next = tmaze_move(spec_, pos_, t_, action.index);
  const bool at_goal_cell = next.y != 0;
  const double r = tmaze_reward(pos_.x, next.x, at_goal_cell && next.y == goal_, spec_.corridor);
  pos_ = next;
  ++t_;
  done_ = at_goal_cell || t_ >= spec_.horizon;
  return {observe(), r, done_};
}

}  // namespace mate::envs
