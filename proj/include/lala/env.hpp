#pragma once

// Cooperative navigation: N agents, N targets in an L x L square. Each step
// every agent picks a target index and moves a fixed distance toward it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "lala/rng.hpp"

namespace lala::nav {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

struct EnvConfig {
  std::size_t n_agents = 3;
  double side_length = 15.0;
  double step_distance = 1.0;
  std::size_t max_steps = 30;
  double reach_radius = 0.5;

  double r_step() const { return -1.0 / side_length; }
  double r_conf() const { return -45.0 / side_length; }
  double r_coop() const { return 0.8 / side_length; }

  void validate() const {
    if (n_agents < 2) throw std::invalid_argument("EnvConfig: need at least 2 agents");
    if (!(side_length > 0.0)) throw std::invalid_argument("EnvConfig: side_length must be > 0");
    if (!(step_distance > 0.0)) throw std::invalid_argument("EnvConfig: step_distance must be > 0");
    if (!(reach_radius >= 0.0 && reach_radius < step_distance))
      throw std::invalid_argument("EnvConfig: reach_radius must be in [0, step_distance)");
    if (max_steps == 0) throw std::invalid_argument("EnvConfig: max_steps must be > 0");
  }
};

inline constexpr int kNoAction = -1;

struct WorldState {
  std::vector<Vec2> agents;
  std::vector<Vec2> previous_agents;
  std::vector<Vec2> targets;
  std::vector<int> last_actions;  // kNoAction before the first step
  std::size_t timestep = 1;       // index of the next step to execute
  bool done = false;
  bool success = false;

  bool operator==(const WorldState&) const = default;
};

struct StepResult {
  std::vector<double> rewards;
  bool done = false;
  bool success = false;
  std::vector<std::pair<std::size_t, std::size_t>> conflicts;  // i < j
};

inline std::size_t observation_size(std::size_t n) { return 2 * n + 4 * (n - 1) + n; }

/// Observation rows with every position entry divided by the side length;
/// the one-hot tail is left untouched.
template <class M>
M normalize_observations(M obs, std::size_t n, double side_length) {
  const std::size_t pos = 2 * n + 4 * (n - 1);
  const double inv = 1.0 / side_length;
  for (std::size_t r = 0; r < obs.rows(); ++r)
    for (std::size_t c = 0; c < pos; ++c) obs(r, c) *= inv;
  return obs;
}

inline WorldState reset(const EnvConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Stream rng(seed, 0x6e6176);
  WorldState s;
  const double L = cfg.side_length;
  for (std::size_t i = 0; i < cfg.n_agents; ++i) s.targets.push_back({rng.uniform(0, L), rng.uniform(0, L)});
  for (std::size_t i = 0; i < cfg.n_agents; ++i) s.agents.push_back({rng.uniform(0, L), rng.uniform(0, L)});
  s.previous_agents = s.agents;
  s.last_actions.assign(cfg.n_agents, kNoAction);
  return s;
}

/// Conflicting pairs: agents that chose the same target index.
inline std::vector<std::pair<std::size_t, std::size_t>> conflict_pairs(std::span<const std::size_t> actions,
                                                                       std::size_t n_targets) {
  std::vector<std::vector<std::size_t>> by_target(n_targets);
  for (std::size_t i = 0; i < actions.size(); ++i) by_target[actions[i]].push_back(i);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& group : by_target)
    for (std::size_t a = 0; a < group.size(); ++a)
      for (std::size_t b = a + 1; b < group.size(); ++b) out.emplace_back(group[a], group[b]);
  std::sort(out.begin(), out.end());
  return out;
}

/// True when the targets can be matched one-to-one to distinct agents within
/// reach (augmenting-path bipartite matching).
inline bool all_targets_occupied(const WorldState& s, double reach) {
  const std::size_t n = s.targets.size();
  std::vector<std::vector<std::size_t>> near(n);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < s.agents.size(); ++i)
      if (norm(s.agents[i] - s.targets[k]) <= reach) near[k].push_back(i);
  std::vector<int> owner(s.agents.size(), -1);
  std::vector<char> seen;
  auto augment = [&](auto&& self, std::size_t k) -> bool {
    for (std::size_t i : near[k]) {
      if (seen[i]) continue;
      seen[i] = 1;
      if (owner[i] < 0 || self(self, static_cast<std::size_t>(owner[i]))) {
        owner[i] = static_cast<int>(k);
        return true;
      }
    }
    return false;
  };
  for (std::size_t k = 0; k < n; ++k) {
    if (near[k].empty()) return false;
    seen.assign(s.agents.size(), 0);
    if (!augment(augment, k)) return false;
  }
  return true;
}

/// Advance one step. Rewards: r_step to everyone; r_conf once to each agent
/// sharing its chosen index with another agent; r_coop to each agent within
/// reach of a target no other agent is within reach of.
inline std::pair<WorldState, StepResult> step(const WorldState& state,
                                              std::span<const std::size_t> actions,
                                              const EnvConfig& cfg) {
  if (state.done) throw std::logic_error("step: episode already finished");
  const std::size_t n = cfg.n_agents;
  if (actions.size() != n) throw std::invalid_argument("step: one action per agent required");
  for (std::size_t a : actions)
    if (a >= n) throw std::out_of_range("step: target index out of range");

  WorldState next = state;
  next.previous_agents = state.agents;
  const double L = cfg.side_length;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 goal = state.targets[actions[i]];
    const Vec2 d = goal - state.agents[i];
    const double dist = norm(d);
    Vec2 p = goal;
    if (dist > cfg.step_distance) {
      p = {state.agents[i].x + d.x / dist * cfg.step_distance,
           state.agents[i].y + d.y / dist * cfg.step_distance};
    }
    next.agents[i] = {std::clamp(p.x, 0.0, L), std::clamp(p.y, 0.0, L)};
    next.last_actions[i] = static_cast<int>(actions[i]);
  }

  StepResult res;
  res.rewards.assign(n, cfg.r_step());
  res.conflicts = conflict_pairs(actions, n);
  std::vector<char> in_conflict(n, 0);
  for (auto [i, j] : res.conflicts) in_conflict[i] = in_conflict[j] = 1;
  for (std::size_t i = 0; i < n; ++i)
    if (in_conflict[i]) res.rewards[i] += cfg.r_conf();

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (norm(next.agents[i] - next.targets[k]) > cfg.reach_radius) continue;
      bool exclusive = true;
      for (std::size_t j = 0; j < n && exclusive; ++j)
        if (j != i && norm(next.agents[j] - next.targets[k]) <= cfg.reach_radius) exclusive = false;
      if (exclusive) {
        res.rewards[i] += cfg.r_coop();
        break;
      }
    }
  }

  res.success = all_targets_occupied(next, cfg.reach_radius);
  res.done = res.success || state.timestep >= cfg.max_steps;
  next.success = res.success;
  next.done = res.done;
  next.timestep = state.timestep + 1;
  return {std::move(next), std::move(res)};
}

/// Egocentric observation:
///   [targets - own (2N) | others now - own (2(N-1)) | others before - own (2(N-1)) | one-hot last action (N)]
/// All offsets are taken from the agent's current position; "before" is the
/// other agent's position one step earlier.
inline std::vector<double> observe(const WorldState& s, std::size_t agent, const EnvConfig& cfg) {
  const std::size_t n = cfg.n_agents;
  if (agent >= n) throw std::out_of_range("observe: agent index out of range");
  std::vector<double> o;
  o.reserve(observation_size(n));
  const Vec2 self = s.agents[agent];
  for (const Vec2& t : s.targets) {
    o.push_back(t.x - self.x);
    o.push_back(t.y - self.y);
  }
  for (std::size_t j = 0; j < n; ++j)
    if (j != agent) {
      o.push_back(s.agents[j].x - self.x);
      o.push_back(s.agents[j].y - self.y);
    }
  for (std::size_t j = 0; j < n; ++j)
    if (j != agent) {
      o.push_back(s.previous_agents[j].x - self.x);
      o.push_back(s.previous_agents[j].y - self.y);
    }
  for (std::size_t k = 0; k < n; ++k)
    o.push_back(s.last_actions[agent] == static_cast<int>(k) ? 1.0 : 0.0);
  return o;
}

/// Outcome of a finished episode.
struct EpisodeRecord {
  bool success = false;
  std::size_t success_step = 0;  // step index at which success first held
  std::size_t steps = 0;
  double reward_mean = 0.0;      // mean per-agent episode return
};

inline double navigation_time(const EpisodeRecord& rec, const EnvConfig& cfg) {
  if (!rec.success) return 1.0;
  return static_cast<double>(rec.success_step) / static_cast<double>(cfg.max_steps);
}

/// Per-step episode trace: episode,t,agent,x,y,action,reward,conflict_flag.
/// Row t = 0 holds the start positions with an empty action field; row t > 0
/// holds positions after step t. Target layouts go to a companion stream
/// (episode,target,x,y) so observations can be rebuilt from the trace.
class TraceWriter {
public:
  TraceWriter(std::ostream& os, std::ostream& targets) : os_(os), targets_(targets) {
    os_ << "episode,t,agent,x,y,action,reward,conflict_flag\n";
    targets_ << "episode,target,x,y\n";
  }

  void begin(std::size_t episode, const WorldState& start) {
    char buf[256];
    for (std::size_t k = 0; k < start.targets.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", episode, k, start.targets[k].x,
                    start.targets[k].y);
      targets_ << buf;
    }
    for (std::size_t i = 0; i < start.agents.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,0,%zu,%.17g,%.17g,,0,0\n", episode, i, start.agents[i].x,
                    start.agents[i].y);
      os_ << buf;
    }
  }

  void write(std::size_t episode, std::size_t t, const WorldState& after,
             std::span<const std::size_t> actions, const StepResult& res) {
    std::vector<char> flag(actions.size(), 0);
    for (auto [i, j] : res.conflicts) flag[i] = flag[j] = 1;
    char buf[256];
    for (std::size_t i = 0; i < actions.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%zu,%.17g,%d\n", episode, t, i,
                    after.agents[i].x, after.agents[i].y, actions[i], res.rewards[i], flag[i]);
      os_ << buf;
    }
  }

private:
  std::ostream& os_;
  std::ostream& targets_;
};

}  // namespace lala::nav
