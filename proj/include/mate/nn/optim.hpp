#pragma once

#include "mate/nn/graph.hpp"
#include "mate/nn/tensor.hpp"

#include <cstdint>
#include <functional>

namespace mate::nn {

struct AdamState {
  Gradients first_moment;
  Gradients second_moment;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::span<Parameter* const> params, double beta1 = 0.9, double beta2 = 0.999,
                     double epsilon = 1e-8);
};

// Bias-corrected Adam; updates `params` in place and advances `state.step` by one.
void adam_step(AdamState& state, std::span<Parameter* const> params, const Gradients& grads, double lr);

double global_norm(const Gradients& grads);

// Rescales to `max_norm` when the global L2 norm exceeds it. Returns the pre-clip norm.
double clip_gradients(Gradients& grads, double max_norm);

// Max over all parameter entries of |analytic - central| / max(|analytic|, |central|, floor),
// floor = kFiniteDifferenceFloor * max(1, |loss|). Central differences carry roundoff of
// order 1e-16 |loss| / eps, so entries below the floor are compared in absolute terms.
// `loss` builds a scalar on a fresh tape from the current parameter values.
inline constexpr double kFiniteDifferenceFloor = 1e-6;

double finite_difference_check(const std::function<Tape::Var(Tape&)>& loss, std::span<Parameter* const> params,
                               double eps);

}  // namespace mate::nn
