#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "lala/env.hpp"
#include "lala/harness.hpp"

using namespace lala;
using namespace lala::nav;

namespace {

WorldState manual(std::vector<Vec2> agents, std::vector<Vec2> targets) {
  WorldState s;
  s.agents = agents;
  s.previous_agents = agents;
  s.targets = std::move(targets);
  s.last_actions.assign(s.agents.size(), kNoAction);
  return s;
}

EnvConfig with_agents(std::size_t n) {
  EnvConfig c;
  c.n_agents = n;
  return c;
}

}  // namespace

TEST(Config, RewardConstantsAreExact) {
  EnvConfig c;
  EXPECT_EQ(c.r_step(), -1.0 / 15.0);
  EXPECT_EQ(c.r_conf(), -45.0 / 15.0);
  EXPECT_EQ(c.r_coop(), 0.8 / 15.0);
  EXPECT_EQ(c.side_length, 15.0);
  EXPECT_EQ(c.max_steps, 30u);
  EXPECT_EQ(c.step_distance, 1.0);
}

TEST(Config, ValidationRejectsBadValues) {
  EXPECT_THROW(with_agents(1).validate(), std::invalid_argument);
  EnvConfig c;
  c.reach_radius = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.side_length = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Reset, DeterministicAndInBounds) {
  const EnvConfig c = with_agents(7);
  EXPECT_EQ(reset(c, 5), reset(c, 5));
  EXPECT_NE(reset(c, 5), reset(c, 6));
  const WorldState s = reset(c, 5);
  ASSERT_EQ(s.agents.size(), 7u);
  ASSERT_EQ(s.targets.size(), 7u);
  for (const auto* v : {&s.agents, &s.targets})
    for (Vec2 p : *v) {
      EXPECT_GE(p.x, 0.0);
      EXPECT_LE(p.x, 15.0);
      EXPECT_GE(p.y, 0.0);
      EXPECT_LE(p.y, 15.0);
    }
  EXPECT_EQ(s.previous_agents, s.agents);
  EXPECT_EQ(s.timestep, 1u);
}

TEST(Reset, CoordinatesAreUniformOnAverage) {
  const EnvConfig c = with_agents(2);
  double sum = 0;
  std::size_t count = 0;
  for (std::uint64_t seed = 0; seed < 10000; ++seed) {
    const WorldState s = reset(c, seed);
    for (Vec2 p : s.agents) sum += p.x + p.y, count += 2;
    for (Vec2 p : s.targets) sum += p.x + p.y, count += 2;
  }
  EXPECT_NEAR(sum / count, 7.5, 0.02 * 7.5);
}

TEST(Step, ConflictPenaltyForSharedTarget) {
  const EnvConfig c = with_agents(3);
  WorldState s = manual({{1, 1}, {10, 10}, {5, 1}}, {{14, 14}, {0, 14}, {7, 7}});
  const std::vector<std::size_t> a{2, 2, 0};
  auto [next, res] = step(s, a, c);
  EXPECT_DOUBLE_EQ(res.rewards[0], -1.0 / 15 - 3.0);
  EXPECT_DOUBLE_EQ(res.rewards[1], -1.0 / 15 - 3.0);
  EXPECT_DOUBLE_EQ(res.rewards[2], -1.0 / 15);
  ASSERT_EQ(res.conflicts.size(), 1u);
  EXPECT_EQ(res.conflicts[0], (std::pair<std::size_t, std::size_t>{0, 1}));
}

TEST(Step, ExclusiveOccupantGetsCooperationAward) {
  const EnvConfig c = with_agents(2);
  WorldState s = manual({{3, 3}, {10, 10}}, {{3, 3}, {0, 0}});
  const std::vector<std::size_t> a{0, 1};
  auto [next, res] = step(s, a, c);
  EXPECT_NEAR(res.rewards[0], -0.2 / 15, 1e-15);
  EXPECT_NEAR(res.rewards[0], -0.01333, 1e-5);
  EXPECT_DOUBLE_EQ(res.rewards[1], -1.0 / 15);
}

TEST(Step, SnapsOntoTargetWithinOneStep) {
  const EnvConfig c = with_agents(2);
  WorldState s = manual({{3, 3}, {10, 10}}, {{4, 3}, {0, 0}});
  auto [next, res] = step(s, std::vector<std::size_t>{0, 1}, c);
  EXPECT_EQ(next.agents[0].x, 4.0);
  EXPECT_EQ(next.agents[0].y, 3.0);
  EXPECT_EQ(next.previous_agents[0].x, 3.0);
  EXPECT_EQ(next.last_actions[0], 0);
}

TEST(Step, SuccessEndsEpisodeAndFurtherStepsAreErrors) {
  const EnvConfig c = with_agents(2);
  WorldState s = manual({{3, 3}, {10, 10}}, {{3.5, 3}, {10, 10.5}});
  auto [next, res] = step(s, std::vector<std::size_t>{0, 1}, c);
  EXPECT_TRUE(res.success);
  EXPECT_TRUE(res.done);
  EXPECT_THROW(step(next, std::vector<std::size_t>{0, 1}, c), std::logic_error);
}

TEST(Step, SameTargetNeverSucceeds) {
  const EnvConfig c = with_agents(2);
  WorldState s = manual({{3, 3}, {3, 3}}, {{3, 3}, {10, 10}});
  auto [next, res] = step(s, std::vector<std::size_t>{0, 0}, c);
  EXPECT_FALSE(res.success);
}

TEST(Step, EpisodeEndsAtHorizon) {
  const EnvConfig c = with_agents(2);
  WorldState s = manual({{0, 0}, {0, 0}}, {{15, 15}, {0, 15}});
  std::size_t steps = 0;
  while (!s.done) {
    s = step(s, std::vector<std::size_t>{0, 0}, c).first;
    ++steps;
  }
  EXPECT_EQ(steps, 30u);
  EXPECT_FALSE(s.success);
}

TEST(Step, InvalidActionsRejected) {
  const EnvConfig c = with_agents(2);
  WorldState s = reset(c, 1);
  EXPECT_THROW(step(s, std::vector<std::size_t>{0, 2}, c), std::out_of_range);
  EXPECT_THROW(step(s, std::vector<std::size_t>{0}, c), std::invalid_argument);
}

TEST(Properties, RewardBoundsPositionsAndConflictsOverRandomEpisodes) {
  for (std::size_t n : {2u, 3u, 5u}) {
    const EnvConfig c = with_agents(n);
    Stream rng(n);
    for (std::uint64_t ep = 0; ep < 100; ++ep) {
      WorldState s = reset(c, ep * 31 + n);
      while (!s.done) {
        std::vector<std::size_t> a(n);
        for (auto& x : a) x = rng.index(n);
        auto [next, res] = step(s, a, c);
        std::set<std::pair<std::size_t, std::size_t>> brute;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i + 1; j < n; ++j)
            if (a[i] == a[j]) brute.insert({i, j});
        const std::set<std::pair<std::size_t, std::size_t>> got(res.conflicts.begin(), res.conflicts.end());
        EXPECT_EQ(got, brute);
        for (double r : res.rewards) {
          EXPECT_GE(r, c.r_step() + c.r_conf() - 1e-12);
          EXPECT_LE(r, c.r_step() + c.r_coop() + 1e-12);
        }
        for (Vec2 p : next.agents) {
          EXPECT_GE(p.x, 0.0);
          EXPECT_LE(p.x, c.side_length);
          EXPECT_GE(p.y, 0.0);
          EXPECT_LE(p.y, c.side_length);
        }
        EXPECT_TRUE(!res.success || res.done);
        s = std::move(next);
      }
    }
  }
}

TEST(Observe, LayoutAndAnchors) {
  const EnvConfig c = with_agents(2);
  WorldState s = manual({{0, 0}, {0, 0}}, {{3, 4}, {1, 1}});
  const auto o = observe(s, 0, c);
  ASSERT_EQ(o.size(), observation_size(2));
  EXPECT_EQ(observation_size(2), 2u * 2 + 4 * 1 + 2);
  EXPECT_EQ(o[0], 3.0);
  EXPECT_EQ(o[1], 4.0);
  EXPECT_EQ(o[4], 0.0);  // other agent at the same position
  EXPECT_EQ(o[5], 0.0);
  EXPECT_EQ(o[8], 0.0);  // no last action at t = 1
  EXPECT_EQ(o[9], 0.0);
  auto [next, res] = step(s, std::vector<std::size_t>{1, 0}, c);
  const auto o2 = observe(next, 0, c);
  EXPECT_EQ(o2[8], 0.0);
  EXPECT_EQ(o2[9], 1.0);
  EXPECT_THROW(observe(s, 2, c), std::out_of_range);
}

TEST(NavigationTime, Anchors) {
  const EnvConfig c;
  EXPECT_EQ(navigation_time({false, 0, 30, 0}, c), 1.0);
  EXPECT_DOUBLE_EQ(navigation_time({true, 12, 12, 0}, c), 0.4);
  EXPECT_EQ(navigation_time({true, 30, 30, 0}, c), 1.0);
}

TEST(ScriptedController, NearestDistinctTargetsAlwaysSucceed) {
  for (std::size_t n : {2u, 3u, 5u}) {
    const EnvConfig c = with_agents(n);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      WorldState s = reset(c, seed);
      std::size_t t = 0;
      bool success = false;
      while (!s.done) {
        auto [next, res] = step(s, harness::nearest_distinct_targets(s), c);
        ++t;
        success = res.success;
        EXPECT_TRUE(res.conflicts.empty());
        s = std::move(next);
      }
      EXPECT_TRUE(success);
      EXPECT_LT(navigation_time({true, t, t, 0}, c), 1.0);
    }
  }
}

TEST(Trace, RowsAndTargetsAreWritten) {
  const EnvConfig c = with_agents(2);
  std::ostringstream trace, targets;
  TraceWriter w(trace, targets);
  WorldState s = manual({{0, 0}, {1, 1}}, {{3, 4}, {1, 1}});
  w.begin(0, s);
  auto [next, res] = step(s, std::vector<std::size_t>{1, 1}, c);
  w.write(0, 1, next, std::vector<std::size_t>{1, 1}, res);
  EXPECT_EQ(targets.str(), "episode,target,x,y\n0,0,3,4\n0,1,1,1\n");
  const std::string t = trace.str();
  EXPECT_NE(t.find("episode,t,agent,x,y,action,reward,conflict_flag\n0,0,0,0,0,,0,0\n"), std::string::npos);
  EXPECT_NE(t.find("\n0,1,0,"), std::string::npos);
  std::istringstream lines(t);
  std::string line;
  std::size_t step_rows = 0;
  while (std::getline(lines, line)) {
    if (line.rfind("0,1,", 0) != 0) continue;
    ++step_rows;
    const std::size_t action_end = line.rfind(',', line.rfind(',') - 1);
    EXPECT_EQ(line.substr(action_end - 2, 3), ",1,");  // action 1
    EXPECT_EQ(line.substr(line.size() - 2), ",1");     // conflict flag
  }
  EXPECT_EQ(step_rows, 2u);
}
