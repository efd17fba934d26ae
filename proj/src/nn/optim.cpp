#include "mate/nn/optim.hpp"

#include "mate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mate::nn {
namespace {

void require_aligned(std::span<Parameter* const> params, const Gradients& grads, const char* who) {
  if (params.size() != grads.size()) {
    throw UsageError(std::string(who) + ": " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->value.rows() != grads[i].rows() || params[i]->value.cols() != grads[i].cols()) {
      throw UsageError(std::string(who) + ": gradient shape mismatch for " + params[i]->name);
    }
  }
}

}  // namespace

AdamState::AdamState(std::span<Parameter* const> params, double b1, double b2, double eps)
    : beta1(b1), beta2(b2), epsilon(eps) {
  for (const Parameter* p : params) {
    first_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    second_moment.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void adam_step(AdamState& state, std::span<Parameter* const> params, const Gradients& grads, double lr) {
  if (!(lr > 0.0)) throw UsageError("adam_step: learning rate must be positive");
  require_aligned(params, grads, "adam_step");
  if (state.first_moment.size() != params.size()) throw UsageError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].rows() != grads[i].rows() || state.first_moment[i].cols() != grads[i].cols()) {
      throw UsageError("adam_step: moment shape mismatch for " + params[i]->name);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i]->value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

double global_norm(const Gradients& grads) {
  double sq = 0.0;
  for (const auto& g : grads) sq += g.squaredNorm();
  return std::sqrt(sq);
}

double clip_gradients(Gradients& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw UsageError("clip_gradients: max_norm must be positive");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) g *= s;
  }
  return norm;
}

double finite_difference_check(const std::function<Tape::Var(Tape&)>& loss, std::span<Parameter* const> params,
                               double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw UsageError("finite_difference_check: eps must lie in (0, 1e-2]");
  Gradients analytic;
  double floor = 0.0;
  {
    Tape tape;
    Tape::Var l = loss(tape);
    if (!tape.value(l).allFinite()) throw NumericError("finite_difference_check: non-finite loss");
    floor = kFiniteDifferenceFloor * std::max(1.0, std::abs(tape.value(l)(0, 0)));
    tape.backward(l);
    analytic = tape.gradients(params);
  }
  auto evaluate = [&loss]() {
    Tape tape;
    const double v = tape.value(loss(tape))(0, 0);
    if (!std::isfinite(v)) throw NumericError("finite_difference_check: non-finite loss under perturbation");
    return v;
  };
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& value = params[p]->value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double up = evaluate();
      value.data()[i] = saved - eps;
      const double down = evaluate();
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace mate::nn
