#include "mate/envs/continuous.hpp"

#include "mate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mate::envs {

GaussBandit::GaussBandit(std::size_t horizon, double noise) : horizon_(horizon), noise_(noise) {
  if (horizon == 0) throw ConfigError("gauss_bandit: horizon must be positive");
  if (!(noise > 0.0)) throw ConfigError("gauss_bandit: observation noise must be positive");
}

Vector GaussBandit::reset(std::uint64_t seed) {
  rng_.seed(seed);
  mean_ = std::normal_distribution<double>(0.0, 1.0)(rng_);
  t_ = 0;
  done_ = false;
  Vector o(2);
  o << 0.0, 1.0;
  return o;
}

StepResult GaussBandit::step(const Action& action) {
  if (done_) throw UsageError("step on a finished gauss_bandit episode");
  if (action.values.size() != 1) throw ConfigError("gauss_bandit: action must be a single value");
  const double r = std::normal_distribution<double>(mean_, noise_)(rng_);
  ++t_;
  done_ = t_ >= horizon_;
  Vector o(2);
  o << r, 1.0;
  return {o, r, done_};
}

Vector GaussBandit::context() const {
  Vector c(1);
  c << mean_;
  return c;
}

double point_dir_reward(const Vector& velocity, const Vector& direction) {
  const double speed = velocity.norm();
  return velocity.dot(direction) / std::max(speed, 1.0) - 0.01 * speed * speed;
}

PointDir::PointDir(std::size_t horizon) : horizon_(horizon) {
  if (horizon == 0) throw ConfigError("point_dir: horizon must be positive");
}

Vector PointDir::reset(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double angle = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng);
  direction_ = Vector(2);
  direction_ << std::cos(angle), std::sin(angle);
  position_.setZero();
  t_ = 0;
  done_ = false;
  return position_;
}

StepResult PointDir::step(const Action& action) {
  if (done_) throw UsageError("step on a finished point_dir episode");
  if (action.values.size() != 2) throw ConfigError("point_dir: action must have 2 components");
  if (!action.values.allFinite()) throw ConfigError("point_dir: non-finite action");
  const Vector v = action.values.cwiseMax(-1.0).cwiseMin(1.0);
  position_ = (position_ + 0.1 * v).cwiseMax(-1.0).cwiseMin(1.0);
  ++t_;
  done_ = t_ >= horizon_;
  return {position_, point_dir_reward(v, direction_), done_};
}

}  // namespace mate::envs
