#include "mate/envs/continuous.hpp"
#include "mate/envs/env.hpp"
#include "mate/envs/tmaze.hpp"
#include "mate/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace mate;
using namespace mate::envs;

namespace {

// Right along the corridor, then turn towards the cue remembered from the oracle cell.
Action passive_optimal(const Vector& obs, std::size_t, int& cue) {
  if (obs(2) != 0.0) cue = obs(2) > 0 ? 1 : -1;
  if (obs(0) < 1.0) return Action::discrete(kRight);
  return Action::discrete(cue > 0 ? kUp : kDown);
}

int find_seed_with_goal(TMaze& env, int goal) {
  for (int s = 0;; ++s) {
    env.reset(s);
    if (env.goal() == goal) return s;
  }
}

}  // namespace

TEST(TMazeReset, PassiveShowsTrueCueAtStart) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, 10));
  for (int goal : {1, -1}) {
    const int seed = find_seed_with_goal(env, goal);
    const Vector o = env.reset(seed);
    EXPECT_EQ(o(0), 0.0);
    EXPECT_EQ(o(1), 0.0);
    EXPECT_EQ(o(2), goal);
  }
}

TEST(TMazeReset, ActiveNegatedCueAtStart) {
  auto spec = TMazeSpec::from_corridor(TMazeVariant::active, 10);
  spec.false_cue = FalseCue::negated;
  TMaze env(spec);
  for (int goal : {1, -1}) {
    const int seed = find_seed_with_goal(env, goal);
    const Vector o = env.reset(seed);
    EXPECT_DOUBLE_EQ(o(0), 0.1);
    EXPECT_EQ(o(2), -goal);
    // Stepping left reaches the oracle, which shows the truth.
    const auto r = env.step(Action::discrete(kLeft));
    EXPECT_EQ(r.observation(2), goal);
    // Leaving the oracle hides the cue again.
    EXPECT_EQ(env.step(Action::discrete(kRight)).observation(2), 0.0);
  }
}

TEST(TMazeReset, ActiveRandomCueCarriesNoInformation) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::active, 10));
  int agree = 0, nonzero = 0;
  const int episodes = 4000;
  for (int s = 0; s < episodes; ++s) {
    const Vector o = env.reset(s);
    nonzero += o(2) != 0.0;
    agree += o(2) == env.goal();
  }
  EXPECT_EQ(nonzero, episodes);
  EXPECT_NEAR(double(agree) / episodes, 0.5, 0.03);
}

TEST(TMazeReset, GoalPriorIsBalanced) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, 4));
  int up = 0;
  for (int s = 0; s < 4000; ++s) {
    env.reset(s);
    up += env.goal() == 1;
  }
  EXPECT_NEAR(up / 4000.0, 0.5, 0.03);
}

TEST(TMazeStep, JunctionUpToTrueGoal) {
  const std::size_t L = 10;
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, L));
  env.reset(find_seed_with_goal(env, 1));
  for (std::size_t i = 0; i < L; ++i) EXPECT_EQ(env.step(Action::discrete(kRight)).reward, 0.0);
  const auto r = env.step(Action::discrete(kUp));
  EXPECT_DOUBLE_EQ(r.reward, 1.0 - 1.0 / L);
  EXPECT_TRUE(r.done);
  EXPECT_THROW(env.step(Action::discrete(kUp)), UsageError);
}

TEST(TMazeStep, ActiveFirstRightIsBlocked) {
  const std::size_t L = 10;
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::active, L));
  env.reset(0);
  const auto r = env.step(Action::discrete(kRight));
  EXPECT_EQ(env.position().x, 1);
  EXPECT_DOUBLE_EQ(r.reward, -1.0 / L);
  EXPECT_FALSE(r.done);
  EXPECT_DOUBLE_EQ(env.step(Action::discrete(kRight)).reward, 0.0);
  EXPECT_EQ(env.position().x, 2);
}

TEST(TMazeStep, WallsAreNoOps) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, 5));
  env.reset(0);
  EXPECT_DOUBLE_EQ(env.step(Action::discrete(kLeft)).reward, -1.0 / 5);
  EXPECT_DOUBLE_EQ(env.step(Action::discrete(kUp)).reward, -1.0 / 5);
  EXPECT_EQ(env.position(), (GridPos{0, 0}));
  EXPECT_THROW(env.step(Action::discrete(7)), ConfigError);
}

TEST(TMazeStep, HorizonEndsEpisode) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, 3));
  env.reset(0);
  StepResult r;
  for (int i = 0; i < 4; ++i) r = env.step(Action::discrete(kLeft));
  EXPECT_TRUE(r.done);
  EXPECT_EQ(env.steps(), 4u);
}

TEST(TMazeSpecs, InvalidCorridor) {
  EXPECT_THROW(TMazeSpec::from_corridor(TMazeVariant::passive, 1), ConfigError);
  EXPECT_THROW(TMazeSpec::from_horizon(TMazeVariant::active, 3), ConfigError);
  EXPECT_EQ(TMazeSpec::from_horizon(TMazeVariant::active, 12).corridor, 10u);
  EXPECT_EQ(TMazeSpec::from_horizon(TMazeVariant::passive, 201).corridor, 200u);
}

TEST(TMazeReward, Formula) {
  for (std::size_t L : {2u, 10u, 600u}) {
    EXPECT_EQ(tmaze_reward(3, 4, false, L), 0.0);
    EXPECT_DOUBLE_EQ(tmaze_reward(3, 3, false, L), -1.0 / L);
    EXPECT_DOUBLE_EQ(tmaze_reward(3, 2, false, L), -2.0 / L);
    EXPECT_DOUBLE_EQ(tmaze_reward(3, 3, true, L), 1.0 - 1.0 / L);
  }
}

TEST(ReferenceReturns, PassiveLongCorridor) {
  const auto r = analytic_reference_returns(TMazeSpec::from_horizon(TMazeVariant::passive, 201));
  EXPECT_NEAR(r.optimal, 0.995, 1e-12);
  EXPECT_NEAR(r.markovian, 0.5 - 1.0 / 200, 1e-12);
  EXPECT_NEAR(r.worst, -201.0 / 200, 1e-12);
}

TEST(ReferenceReturns, ActiveShortCorridor) {
  const auto r = analytic_reference_returns(TMazeSpec::from_horizon(TMazeVariant::active, 12));
  EXPECT_NEAR(r.optimal, 0.7, 1e-12);
  EXPECT_NEAR(r.markovian, 0.5 - 2.0 / 10, 1e-12);
  // One step left (-2/L) and then stuck on the oracle wall for the rest of the horizon.
  EXPECT_NEAR(r.worst, -2.0 / 10 - 11.0 / 10, 1e-12);
}

TEST(ReferenceReturns, NegatedStartCueSkipsTheOracle) {
  auto spec = TMazeSpec::from_horizon(TMazeVariant::active, 12);
  spec.false_cue = FalseCue::negated;
  // Blocked first step, straight to the junction, then the known goal.
  EXPECT_NEAR(analytic_reference_returns(spec).optimal, 1.0 - 2.0 / 10, 1e-12);
}

TEST(ReferenceReturns, StayForeverMatchesPassiveWorst) {
  for (std::size_t L : {2u, 5u, 30u}) {
    TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, L));
    const auto ep = rollout(env, 1, [](const Vector&, std::size_t) { return Action::discrete(kLeft); });
    EXPECT_NEAR(ep.episode_return(), analytic_reference_returns(env.spec()).worst, 1e-12);
    EXPECT_NEAR(ep.episode_return(), -double(L + 1) / L, 1e-12);
  }
}

TEST(ScriptedPolicies, PassiveOptimalEveryEpisode) {
  for (std::size_t L : {2u, 10u, 30u}) {
    TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, L));
    for (int seed = 0; seed < 50; ++seed) {
      int cue = 0;
      const auto ep = rollout(env, seed, [&](const Vector& o, std::size_t t) { return passive_optimal(o, t, cue); });
      EXPECT_DOUBLE_EQ(ep.episode_return(), 1.0 - 1.0 / L);
      EXPECT_TRUE(ep.terminated());
    }
  }
}

void check_oracle_versus_false_cue(std::size_t L, FalseCue mode) {
  auto spec = TMazeSpec::from_corridor(TMazeVariant::active, L);
  spec.false_cue = mode;
  TMaze env(spec);
  double fooled_total = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    int cue = 0;
    auto oracle = [&](const Vector& o, std::size_t t) {
      if (t == 0) return Action::discrete(kLeft);
      if (o(2) != 0.0) cue = o(2) > 0 ? 1 : -1;
      if (o(0) < 1.0) return Action::discrete(kRight);
      return Action::discrete(cue > 0 ? kUp : kDown);
    };
    const auto good = rollout(env, seed, oracle);
    EXPECT_NEAR(good.episode_return(), 1.0 - 3.0 / L, 1e-12);

    int false_cue = 0;
    auto gullible = [&](const Vector& o, std::size_t t) {
      if (t == 0) {
        false_cue = o(2) > 0 ? 1 : -1;
        return Action::discrete(kLeft);
      }
      if (o(0) < 1.0) return Action::discrete(kRight);
      return Action::discrete(false_cue > 0 ? kUp : kDown);
    };
    const auto bad = rollout(env, seed, gullible);
    // Turning the wrong way at the junction forfeits the goal term and keeps the penalties.
    const double expected = false_cue == env.goal() ? 1.0 - 3.0 / L : -3.0 / L;
    EXPECT_NEAR(bad.episode_return(), expected, 1e-12);
    fooled_total += bad.episode_return();
  }
  EXPECT_LT(fooled_total / 50, 1.0 - 3.0 / L);
}

TEST(ScriptedPolicies, ActiveOracleVersusFalseCue) {
  for (std::size_t L : {2u, 10u, 40u}) {
    check_oracle_versus_false_cue(L, FalseCue::random);
    check_oracle_versus_false_cue(L, FalseCue::negated);
  }
}

TEST(ContextHiding, NonCueChannelsIgnoreGoal) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> act(0, 3);
  for (auto variant : {TMazeVariant::passive, TMazeVariant::active}) {
    TMaze up(TMazeSpec::from_corridor(variant, 6));
    TMaze down(TMazeSpec::from_corridor(variant, 6));
    for (int episode = 0; episode < 5000; ++episode) {
      up.reset(find_seed_with_goal(up, 1));
      down.reset(find_seed_with_goal(down, -1));
      while (!up.done()) {
        const Action a = Action::discrete(act(rng));
        const auto ru = up.step(a);
        const auto rd = down.step(a);
        ASSERT_EQ(ru.observation.head(2), rd.observation.head(2));
        ASSERT_EQ(ru.done, rd.done);
        // Rewards differ only on arrival at a goal cell.
        if (!ru.done || up.position().y == 0) {
          ASSERT_EQ(ru.reward, rd.reward);
        }
      }
    }
  }
}

TEST(GaussBandit, EpisodeMeanConcentratesOnContext) {
  GaussBandit env(100, 0.5);
  int inside = 0;
  for (int seed = 0; seed < 1000; ++seed) {
    const auto ep = rollout(env, seed, [](const Vector&, std::size_t) { return Action::continuous(Vector::Zero(1)); });
    const double mean = ep.rewards.mean();
    if (std::abs(mean - ep.context(0)) <= 3.0 * 0.5 / std::sqrt(100.0)) ++inside;
    EXPECT_EQ(ep.observations(1, 0), ep.rewards(0));
  }
  EXPECT_GE(inside, 990);
}

TEST(PointDir, StartsAtOriginWithoutLeak) {
  PointDir env(100);
  for (int seed = 0; seed < 20; ++seed) {
    const Vector o = env.reset(seed);
    EXPECT_EQ(o, Vector::Zero(2));
    EXPECT_NEAR(env.context().norm(), 1.0, 1e-15);
  }
}

TEST(PointDir, RewardShape) {
  Vector d(2);
  d << 1.0, 0.0;
  EXPECT_EQ(point_dir_reward(Vector::Zero(2), d), 0.0);
  Vector v(2);
  v << 0.5, 0.0;
  EXPECT_DOUBLE_EQ(point_dir_reward(v, d), 0.5 - 0.01 * 0.25);
  v << 1.0, 1.0;
  EXPECT_DOUBLE_EQ(point_dir_reward(v, d), 1.0 / std::sqrt(2.0) - 0.02);
  PointDir env(3);
  env.reset(0);
  env.set_direction(d);
  Vector big(2);
  big << 5.0, 0.0;
  const auto r = env.step(Action::continuous(big));
  EXPECT_DOUBLE_EQ(r.observation(0), 0.1);
  EXPECT_DOUBLE_EQ(r.reward, 0.99);
}

TEST(Episodes, DeterministicUnderSeedAndActions) {
  for (const char* name : {"tmaze_active", "gauss_bandit", "point_dir"}) {
    auto env = make_env({name, 0, 0, 0.5});
    std::mt19937_64 a1(9), a2(9);
    auto policy = [&](std::mt19937_64& rng) {
      return [&rng, &env](const Vector&, std::size_t) {
        const auto space = env->action_space();
        if (space.kind == ActionKind::discrete) {
          return Action::discrete(std::uniform_int_distribution<int>(0, 3)(rng));
        }
        Vector v(static_cast<Eigen::Index>(space.size));
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::uniform_real_distribution<double>(-1, 1)(rng);
        return Action::continuous(v);
      };
    };
    const auto e1 = rollout(*env, 42, policy(a1));
    const auto e2 = rollout(*env, 42, policy(a2));
    EXPECT_EQ(e1.observations, e2.observations) << name;
    EXPECT_EQ(e1.actions, e2.actions) << name;
    EXPECT_EQ(e1.rewards, e2.rewards) << name;
    EXPECT_EQ(e1.dones, e2.dones) << name;
  }
}

TEST(Transitions, LayoutAndOneHot) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, 4));
  EXPECT_EQ(env.transition_dim(), 2u * 3 + 4 + 1);
  const auto ep = rollout(env, 3, [](const Vector&, std::size_t t) { return Action::discrete(t % 2 ? kLeft : kRight); });
  const Matrix xs = transitions(ep);
  ASSERT_EQ(xs.rows(), static_cast<Eigen::Index>(ep.length()));
  for (Eigen::Index t = 0; t < xs.rows(); ++t) {
    EXPECT_EQ(xs.row(t).segment(0, 3), ep.observations.row(t));
    EXPECT_EQ(xs.row(t).segment(3, 4).sum(), 1.0);
    EXPECT_EQ(xs(t, 3 + (t % 2 ? kLeft : kRight)), 1.0);
    EXPECT_EQ(xs(t, 7), ep.rewards(t));
    EXPECT_EQ(xs.row(t).segment(8, 3), ep.observations.row(t + 1));
  }
}

TEST(Transitions, AtMostOneTerminal) {
  TMaze env(TMazeSpec::from_corridor(TMazeVariant::passive, 4));
  std::mt19937_64 rng(1);
  for (int s = 0; s < 200; ++s) {
    const auto ep = rollout(env, s, [&](const Vector&, std::size_t) {
      return Action::discrete(std::uniform_int_distribution<int>(0, 3)(rng));
    });
    EXPECT_NO_THROW(ep.validate());
    EXPECT_TRUE(ep.terminated());
    EXPECT_GE(ep.episode_return(), -5.0 / 4 - 1e-12);
    EXPECT_LE(ep.episode_return(), 1.0);
  }
}

TEST(Persistence, EpisodesRoundTrip) {
  std::vector<EpisodeRecord> eps;
  auto tm = make_env({"tmaze_passive", 0, 5, 0.5});
  auto pd = make_env({"point_dir", 7, 0, 0.5});
  eps.push_back(rollout(*tm, 1, [](const Vector&, std::size_t) { return Action::discrete(kRight); }));
  eps.push_back(rollout(*pd, 2, [](const Vector& o, std::size_t) { return Action::continuous(o + Vector::Ones(2)); }));
  const auto path = std::filesystem::temp_directory_path() / "mate_episodes.bin";
  save_episodes(path, eps);
  const auto back = load_episodes(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].observations, eps[i].observations);
    EXPECT_EQ(back[i].actions, eps[i].actions);
    EXPECT_EQ(back[i].rewards, eps[i].rewards);
    EXPECT_EQ(back[i].dones, eps[i].dones);
    EXPECT_EQ(back[i].context, eps[i].context);
    EXPECT_EQ(back[i].action_space.kind, eps[i].action_space.kind);
  }
}

TEST(Factory, ResolveAndReject) {
  EXPECT_EQ(resolve({"tmaze_active", 0, 10, 0.5}).horizon, 12u);
  EXPECT_EQ(resolve({"tmaze_passive", 31, 0, 0.5}).corridor_len, 30u);
  EXPECT_THROW(resolve({"tmaze_passive", 10, 10, 0.5}), ConfigError);
  EXPECT_THROW(resolve({"tmaze_passive", 0, 1, 0.5}), ConfigError);
  EXPECT_THROW(resolve({"mujoco", 0, 0, 0.5}), ConfigError);
  EXPECT_THROW(resolve({"point_dir", 0, 5, 0.5}), ConfigError);
  EXPECT_EQ(resolve({"point_dir", 0, 0, 0.5}).horizon, 100u);
}
