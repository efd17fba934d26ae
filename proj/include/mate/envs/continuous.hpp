#pragma once

#include "mate/envs/env.hpp"

#include <random>

namespace mate::envs {

// Context c ~ N(0, 1). Every step pays r ~ N(c, noise^2) whatever the action;
// the observation is (previous reward, 1).
class GaussBandit final : public Environment {
 public:
  GaussBandit(std::size_t horizon, double noise);

  std::string_view name() const override { return "gauss_bandit"; }
  std::size_t observation_dim() const override { return 2; }
  ActionSpace action_space() const override { return {ActionKind::continuous, 1}; }
  std::size_t horizon() const override { return horizon_; }
  Vector reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  Vector context() const override;
  std::size_t steps() const override { return t_; }
  bool done() const override { return done_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<GaussBandit>(*this); }

  double noise() const { return noise_; }
  double mean() const { return mean_; }

 private:
  std::size_t horizon_;
  double noise_;
  double mean_ = 0.0;
  std::mt19937_64 rng_;
  std::size_t t_ = 0;
  bool done_ = true;
};

// Point mass in [-1, 1]^2 rewarded for moving along a hidden unit direction.
// reward = <v, d> / max(|v|, 1) - 0.01 |v|^2 with v clipped to [-1, 1]^2.
class PointDir final : public Environment {
 public:
  explicit PointDir(std::size_t horizon);

  std::string_view name() const override { return "point_dir"; }
  std::size_t observation_dim() const override { return 2; }
  ActionSpace action_space() const override { return {ActionKind::continuous, 2}; }
  std::size_t horizon() const override { return horizon_; }
  Vector reset(std::uint64_t seed) override;
  StepResult step(const Action& action) override;
  Vector context() const override { return direction_; }
  std::size_t steps() const override { return t_; }
  bool done() const override { return done_; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<PointDir>(*this); }

  void set_direction(Vector d) { direction_ = std::move(d); }

 private:
  std::size_t horizon_;
  Vector position_ = Vector::Zero(2);
  Vector direction_ = Vector::Zero(2);
  std::size_t t_ = 0;
  bool done_ = true;
};

double point_dir_reward(const Vector& velocity, const Vector& direction);

}  // namespace mate::envs
