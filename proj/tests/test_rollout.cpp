#include <gtest/gtest.h>

#include <chrono>
#include <sstream>

#include "oracles.hpp"
#include "vgpo/rollout.hpp"

using namespace vgpo;

namespace {

struct ConstField {
  std::vector<double> c;
  std::vector<double> operator()(std::span<const double>, double, std::size_t) const { return c; }
};

struct ZeroField {
  std::vector<double> operator()(std::span<const double> x, double, std::size_t) const {
    return std::vector<double>(x.size(), 0.0);
  }
};

Mlp small_net(std::size_t contexts = 8) { return Mlp(Architecture{2, contexts, {16, 16}, Activation::tanh}); }

}  // namespace

TEST(Rollout, TrajectoryShapeAndLastStepReward) {
  const auto task = mode_preference_task();
  const auto net = small_net();
  const auto p = net.init_params(1);
  const auto g = rollout_group(NetField{net, p}, task, 3, 8, NoiseSchedule::make(0.7, 10), GroupSeed{1, 2, 0});
  ASSERT_EQ(g.group_size(), 8u);
  ASSERT_EQ(g.steps(), 10u);
  for (const auto& tr : g.trajectories) {
    EXPECT_EQ(tr.context, 3u);
    EXPECT_EQ(tr.states.size(), 11u);
    EXPECT_EQ(tr.noises.size(), 10u);
    EXPECT_EQ(tr.logp_old.size(), 10u);
    ASSERT_EQ(tr.instant_rewards.size(), 10u);
    EXPECT_EQ(tr.instant_rewards.back(), tr.terminal_reward);
    EXPECT_EQ(tr.terminal_reward, reward(task, tr.terminal_state(), 3));
  }
}

TEST(Rollout, FuzzLastInstantRewardIsTerminalReward) {
  oracle::Gen gen(21);
  std::size_t rollouts = 0;
  for (int rep = 0; rep < 125; ++rep) {
    const auto task = task_by_kind(static_cast<TaskKind>(rep % 3));
    const Mlp n(Architecture{2, task.context_count, {12}, Activation::tanh});
    const auto p = n.init_params(rep);
    const auto s = NoiseSchedule::make(gen.uniform(0.0, 1.5), gen.index(2, 12));
    const auto g = rollout_group(NetField{n, p}, task, gen.index(0, task.context_count - 1), 8, s,
                                 GroupSeed{static_cast<std::uint64_t>(rep), 0, 0});
    for (const auto& tr : g.trajectories) {
      ++rollouts;
      ASSERT_EQ(tr.instant_rewards.back(), tr.terminal_reward);
      for (double r : tr.instant_rewards) {
        ASSERT_GE(r, 0.0);
        ASSERT_LE(r, 1.0);
      }
    }
  }
  EXPECT_EQ(rollouts, 1000u);
}

TEST(Rollout, StoredLogProbMatchesRecomputation) {
  const auto task = mode_preference_task();
  const auto net = small_net();
  const auto p = net.init_params(2);
  const auto s = NoiseSchedule::make(0.7, 10);
  const NetField f{net, p};
  const auto g = rollout_group(f, task, 0, 8, s, GroupSeed{5, 1, 1});
  for (const auto& tr : g.trajectories) {
    for (std::size_t j = 0; j < tr.steps(); ++j) {
      const double tau = s.tau(s.steps - j);
      const StepDistribution d{transition_mean(tr.states[j], f(tr.states[j], tau, 0), tau, s),
                               transition_variance(tau, s)};
      EXPECT_NEAR(std::exp(tr.logp_old[j]), std::exp(transition_logpdf(tr.states[j + 1], d)), 1e-12);
      EXPECT_EQ(tr.logp_old[j], transition_logpdf(tr.states[j + 1], tr.step_dists[j]));
    }
  }
}

TEST(Rollout, DeterministicUnderFixedSeed) {
  const auto task = mode_preference_task();
  const auto net = small_net();
  const auto p = net.init_params(3);
  const auto s = NoiseSchedule::make(0.7, 10);
  auto a = rollout_group(NetField{net, p}, task, 1, 8, s, GroupSeed{9, 4, 2});
  auto b = rollout_group(NetField{net, p}, task, 1, 8, s, GroupSeed{9, 4, 2});
  std::ostringstream sa, sb;
  write_group_jsonl(sa, a);
  write_group_jsonl(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  auto c = rollout_group(NetField{net, p}, task, 1, 8, s, GroupSeed{9, 4, 3});
  EXPECT_NE(a.trajectories[0].states, c.trajectories[0].states);
}

TEST(Rollout, ZeroNoiseLevelDependsOnlyOnInitialState) {
  const auto task = mode_preference_task();
  const auto net = small_net();
  const auto p = net.init_params(4);
  const auto s = NoiseSchedule::make(0.0, 10);
  const NetField f{net, p};
  const auto shared = rollout_group(f, task, 2, 6, s, GroupSeed{1, 1, 1}, RolloutOptions{true, true});
  for (const auto& tr : shared.trajectories) {
    EXPECT_EQ(tr.states, shared.trajectories[0].states);
    EXPECT_TRUE(tr.logp_old.empty());
  }
  const auto indep = rollout_group(f, task, 2, 6, s, GroupSeed{1, 1, 1}, RolloutOptions{true, false});
  for (std::size_t i = 0; i < indep.group_size(); ++i) {
    const auto& tr = indep.trajectories[i];
    if (i > 0) EXPECT_NE(tr.states.front(), indep.trajectories[0].states.front());
    EXPECT_EQ(tr.states.back(), ode_sample(f, tr.states.front(), 2, 10));
  }
}

TEST(Rollout, SharedInitialNoiseOnlySharesStartingState) {
  const auto task = mode_preference_task();
  const auto net = small_net();
  const auto p = net.init_params(5);
  const auto g = rollout_group(NetField{net, p}, task, 0, 4, NoiseSchedule::make(0.7, 10), GroupSeed{2, 3, 0},
                               RolloutOptions{true, true});
  for (const auto& tr : g.trajectories) EXPECT_EQ(tr.states.front(), g.trajectories[0].states.front());
  EXPECT_NE(g.trajectories[0].states.back(), g.trajectories[1].states.back());
}

TEST(InstantReward, ConstantFieldProjection) {
  const auto task = mode_preference_task();
  const std::vector<double> s{1.0, 0.5}, c{-2.0, 1.0};
  const double tau = 0.4;
  const std::vector<double> proj{1.0 - 0.4 * -2.0, 0.5 - 0.4 * 1.0};
  EXPECT_DOUBLE_EQ(instant_reward(ConstField{c}, s, tau, task, 0), reward(task, proj, 0));
  EXPECT_EQ(instant_reward(ConstField{c}, s, 0.0, task, 5), reward(task, s, 5));
}

TEST(InstantReward, FrozenDynamicsGiveConstantRewards) {
  // zero velocity and zero noise: the state never moves and the projection is the state itself
  const auto task = mode_preference_task();
  Rng rng(1);
  const auto tr = rollout_trajectory(ZeroField{}, task, 4, NoiseSchedule::make(0.0, 10), rng, RolloutOptions{});
  for (double r : tr.instant_rewards) EXPECT_EQ(r, tr.instant_rewards.front());
}

TEST(Rollout, ErrorsAndJsonDump) {
  const auto task = mode_preference_task();
  const auto net = small_net();
  const auto p = net.init_params(6);
  const auto s = NoiseSchedule::make(0.7, 10);
  EXPECT_THROW(rollout_group(NetField{net, p}, task, 0, 1, s, GroupSeed{}), std::invalid_argument);

  struct Exploding {
    std::vector<double> operator()(std::span<const double> x, double tau, std::size_t) const {
      if (tau < 0.55) return std::vector<double>(x.size(), std::numeric_limits<double>::infinity());
      return std::vector<double>(x.size(), 0.0);
    }
  };
  Rng rng(0);
  try {
    rollout_trajectory(Exploding{}, task, 0, s, rng, RolloutOptions{false, false});
    FAIL() << "expected an abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("t=5"), std::string::npos) << e.what();
  }
  // the instant reward at t=6 already queries the field at tau=0.5
  try {
    rollout_trajectory(Exploding{}, task, 0, s, rng, RolloutOptions{});
    FAIL() << "expected an abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("t=6"), std::string::npos) << e.what();
  }

  const auto g = rollout_group(NetField{net, p}, task, 0, 3, s, GroupSeed{});
  std::ostringstream os;
  write_group_jsonl(os, g);
  std::istringstream is(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j["index"].get<std::size_t>(), n);
    EXPECT_EQ(j["states"].size(), 11u);
    EXPECT_EQ(j["instant_rewards"].size(), 10u);
    EXPECT_EQ(j["terminal_reward"].get<double>(), g.trajectories[n].terminal_reward);
    ++n;
  }
  EXPECT_EQ(n, 3u);
}

TEST(Rollout, DefaultGroupWithinBudget) {
  const auto task = mode_preference_task();
  const Mlp net(Architecture{2, 8, {64, 64}, Activation::tanh});
  const auto p = net.init_params(0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto g = rollout_group(NetField{net, p}, task, 0, 8, NoiseSchedule::make(0.7, 10), GroupSeed{});
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(g.group_size(), 8u);
  EXPECT_LT(ms, 50.0);
}
