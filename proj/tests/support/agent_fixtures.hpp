#pragma once

#include <vector>

#include "lala/agent.hpp"

namespace lala::testing {

inline agent::AgentShape small_shape(std::size_t n = 3) {
  agent::AgentShape s;
  s.n_agents = n;
  s.q_hidden1 = 12;
  s.q_hidden2 = 8;
  s.encoder_hidden = 6;
  s.latent = 4;
  return s;
}

inline Matrix random_obs(std::size_t rows, std::size_t n, Stream& rng) {
  Matrix o(rows, nav::observation_size(n));
  for (double& v : o.values()) v = rng.uniform(-15, 15);
  return o;
}

inline agent::Transition random_transition(std::size_t n, Stream& rng) {
  agent::Transition t;
  const Matrix o = random_obs(2, n, rng);
  t.obs.assign(o.row_span(0).begin(), o.row_span(0).end());
  t.next_obs.assign(o.row_span(1).begin(), o.row_span(1).end());
  t.action = rng.index(n);
  t.reward = -1.0 / 15.0;
  for (std::size_t j = 0; j + 1 < n; ++j) t.other_actions.push_back(rng.index(n));
  return t;
}

inline agent::Batch random_batch(std::size_t n, std::size_t size, Stream& rng,
                                 std::vector<agent::Transition>& storage) {
  storage.clear();
  for (std::size_t k = 0; k < size; ++k) storage.push_back(random_transition(n, rng));
  std::vector<const agent::Transition*> ptr;
  for (auto& t : storage) ptr.push_back(&t);
  return agent::make_batch(ptr, n);
}

}  // namespace lala::testing
