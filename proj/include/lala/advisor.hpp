#pragma once

// Meso-level advisor. Decisions of all agents over an episode form a
// spatiotemporal graph: vertex (agent i, step t) carries the agent's policy
// distribution; spatial edges join different agents at the same step,
// temporal edges join one agent's consecutive steps. A two-channel graph
// convolution turns those decisions into advice distributions.

#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lala/checkpoint.hpp"
#include "lala/nn.hpp"
#include "lala/tape.hpp"

namespace lala::advisor {

using ad::Tape;
using ad::Var;
using Adjacency = std::vector<std::vector<std::size_t>>;

/// Vertices are ordered t-major, agent-minor: v = t * N + i.
struct Graph {
  std::size_t n_agents = 0;
  std::size_t steps = 0;
  Matrix features;  // V x N, row v = decision of agent(v) at time(v)
  Adjacency spatial;
  Adjacency temporal;

  std::size_t vertex_count() const { return n_agents * steps; }
  std::size_t vertex(std::size_t agent, std::size_t t) const { return t * n_agents + agent; }
  std::size_t agent_of(std::size_t v) const { return v % n_agents; }
  std::size_t time_of(std::size_t v) const { return v / n_agents; }
};

inline Graph build_graph(const Matrix& decisions, std::size_t n_agents) {
  if (n_agents == 0 || decisions.rows() == 0 || decisions.rows() % n_agents != 0)
    throw std::invalid_argument("build_graph: decision record is not N agents x T' steps");
  Graph g;
  g.n_agents = n_agents;
  g.steps = decisions.rows() / n_agents;
  g.features = decisions;
  const std::size_t V = g.vertex_count();
  g.spatial.resize(V);
  g.temporal.resize(V);
  for (std::size_t t = 0; t < g.steps; ++t)
    for (std::size_t i = 0; i < n_agents; ++i) {
      const std::size_t v = g.vertex(i, t);
      for (std::size_t j = 0; j < n_agents; ++j)
        if (j != i) g.spatial[v].push_back(g.vertex(j, t));
      if (t > 0) g.temporal[v].push_back(g.vertex(i, t - 1));
      if (t + 1 < g.steps) g.temporal[v].push_back(g.vertex(i, t + 1));
    }
  return g;
}

/// decisions[t][i] is agent i's distribution at step t.
inline Graph build_graph(const std::vector<std::vector<std::vector<double>>>& decisions) {
  if (decisions.empty() || decisions[0].empty()) throw std::invalid_argument("build_graph: empty record");
  const std::size_t n = decisions[0].size();
  const std::size_t width = decisions[0][0].size();
  Matrix feats(decisions.size() * n, width);
  std::size_t row = 0;
  for (const auto& step : decisions) {
    if (step.size() != n) throw std::invalid_argument("build_graph: ragged decision record");
    for (const auto& d : step) {
      if (d.size() != width) throw std::invalid_argument("build_graph: ragged distribution width");
      std::copy(d.begin(), d.end(), feats.row_span(row++).begin());
    }
  }
  return build_graph(feats, n);
}

/// Max-confidence label: 1 iff the vertex's top probability strictly exceeds every
/// spatial neighbor's probability on that same action.
inline std::vector<char> max_confidence_label(const Graph& g) {
  std::vector<char> label(g.vertex_count(), 0);
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    auto p = g.features.row_span(v);
    const std::size_t a = argmax(p);
    bool top = true;
    for (std::size_t w : g.spatial[v])
      if (!(p[a] > g.features(w, a))) {
        top = false;
        break;
      }
    label[v] = top ? 1 : 0;
  }
  return label;
}

struct DualGcnParams {
  std::size_t width = 0;  // N
  std::vector<Parameter> spatial;   // N x N per layer
  std::vector<Parameter> temporal;  // N x N per layer
  std::vector<Parameter> fusion;    // 2N x N per layer

  DualGcnParams() = default;
  DualGcnParams(std::size_t n, std::size_t layers, std::uint64_t seed) : width(n) {
    if (layers == 0 || layers > 3) throw std::invalid_argument("DualGcnParams: layers must be 1..3");
    Stream rng(seed, 0x616476);
    for (std::size_t k = 0; k < layers; ++k) {
      const std::string p = "advisor.l" + std::to_string(k + 1);
      spatial.emplace_back(p + ".spatial", n, n);
      temporal.emplace_back(p + ".temporal", n, n);
      fusion.emplace_back(p + ".fusion", 2 * n, n);
      glorot_init(spatial.back(), rng);
      glorot_init(temporal.back(), rng);
      glorot_init(fusion.back(), rng);
    }
  }

  std::size_t layers() const { return spatial.size(); }

  ParamRefs parameters() {
    ParamRefs out;
    for (std::size_t k = 0; k < layers(); ++k) {
      out.push_back(&spatial[k]);
      out.push_back(&temporal[k]);
      out.push_back(&fusion[k]);
    }
    return out;
  }
};

/// Per layer k (row-vector convention):
///   m_s = mean of spatial-neighbor rows, m_t = mean of temporal-neighbor rows (0 if none)
///   h_N = m_s W_s + m_t W_t
///   h   = relu([h, h_N] W_o)
/// Advice = softmax(h_K). Returns V x N.
inline Var forward(Tape& tape, DualGcnParams& params, const Graph& g, Grad grad = Grad::on) {
  if (g.features.cols() != params.width) throw dimension_error("advisor forward: feature width != N");
  Var h = tape.constant(g.features);
  for (std::size_t k = 0; k < params.layers(); ++k) {
    Var ms = ad::neighbor_mean(h, g.spatial);
    Var mt = ad::neighbor_mean(h, g.temporal);
    Var hn = ad::add(ad::matmul(ms, bind(tape, params.spatial[k], grad)),
                     ad::matmul(mt, bind(tape, params.temporal[k], grad)));
    h = ad::relu(ad::matmul(ad::concat_cols({h, hn}), bind(tape, params.fusion[k], grad)));
  }
  return ad::softmax_rows(h);
}

inline Matrix advise(DualGcnParams& params, const Graph& g) {
  Tape tape;
  return forward(tape, params, g, Grad::off).value();
}

struct AdvisorLossParts {
  Var total;
  Var temporal;
  Var spatial;
  Var consistency;
};

namespace detail {

inline void ordered_pairs(const Adjacency& adj, std::vector<std::size_t>& from, std::vector<std::size_t>& to) {
  for (std::size_t v = 0; v < adj.size(); ++v)
    for (std::size_t u : adj[v]) {
      from.push_back(v);
      to.push_back(u);
    }
}

inline Var edge_dots(Var p, const Adjacency& adj) {
  std::vector<std::size_t> from, to;
  ordered_pairs(adj, from, to);
  return ad::sum_cols(ad::mul(ad::gather_rows(p, std::move(from)), ad::gather_rows(p, std::move(to))));
}

inline bool has_edges(const Adjacency& adj) {
  for (const auto& nb : adj)
    if (!nb.empty()) return true;
  return false;
}

}  // namespace detail

/// Coordination objective over one graph, summed over vertices:
///   sum_{u in N_t(v)} -log s(p_v.p_u) + sum_{w in N_s(v)} -log s(-p_v.p_w)
///   + label(v) * JSD(p_v || agent_v)
inline AdvisorLossParts advisor_loss(Tape& tape, Var advice, const Graph& g) {
  Var zero = tape.constant(Matrix(1, 1, 0.0));
  Var temporal = zero, spatial = zero, consistency = zero;
  if (detail::has_edges(g.temporal))
    temporal = ad::sum_all(ad::neg_log_sigmoid(detail::edge_dots(advice, g.temporal)));
  if (detail::has_edges(g.spatial))
    spatial = ad::sum_all(ad::neg_log_sigmoid(ad::neg(detail::edge_dots(advice, g.spatial))));
  const std::vector<char> label = max_confidence_label(g);
  std::vector<std::size_t> chosen;
  for (std::size_t v = 0; v < label.size(); ++v)
    if (label[v]) chosen.push_back(v);
  if (!chosen.empty()) {
    Matrix agent_rows(chosen.size(), g.features.cols());
    for (std::size_t k = 0; k < chosen.size(); ++k)
      std::copy(g.features.row_span(chosen[k]).begin(), g.features.row_span(chosen[k]).end(),
                agent_rows.row_span(k).begin());
    consistency = ad::sum_all(ad::jsd_rows(ad::gather_rows(advice, chosen), tape.constant(std::move(agent_rows))));
  }
  return {ad::add(ad::add(temporal, spatial), consistency), temporal, spatial, consistency};
}

/// Extra objective evaluated on the same tape as the graph forwards, given the
/// advice of every graph (in order). Used for the discriminator boost.
using BoostTerm = std::function<Var(Tape&, std::span<const Var>)>;

struct TrainStats {
  std::vector<double> loss;
  std::vector<double> spatial;
  std::vector<double> temporal;
  std::size_t boost_evaluations = 0;
};

/// E epochs of full-batch Adam over every graph in the buffer.
inline TrainStats train_advisor(DualGcnParams& params, AdamState& adam, std::span<const Graph> graphs,
                                std::size_t epochs, const BoostTerm& boost = {}) {
  if (graphs.empty()) throw std::invalid_argument("train_advisor: empty graph buffer");
  TrainStats stats;
  ParamRefs refs = params.parameters();
  for (std::size_t e = 0; e < epochs; ++e) {
    Tape tape;
    std::vector<Var> advice;
    Var total = tape.constant(Matrix(1, 1, 0.0));
    double sp = 0.0, tm = 0.0;
    for (const Graph& g : graphs) {
      advice.push_back(forward(tape, params, g));
      AdvisorLossParts parts = advisor_loss(tape, advice.back(), g);
      total = ad::add(total, parts.total);
      sp += parts.spatial.item();
      tm += parts.temporal.item();
    }
    if (boost) {
      total = ad::add(total, boost(tape, advice));
      ++stats.boost_evaluations;
    }
    zero_grad(refs);
    tape.backward(total);
    adam_step(refs, adam);
    stats.loss.push_back(total.item());
    stats.spatial.push_back(sp);
    stats.temporal.push_back(tm);
  }
  return stats;
}

/// Debug record: u64 V | u64 N | u64 steps | per vertex: u64 count + spatial ids |
/// per vertex: u64 count + temporal ids | V*N doubles. Little-endian.
inline void write_graph(std::ostream& os, const Graph& g) {
  using checkpoint::detail::put;
  put<std::uint64_t>(os, g.vertex_count());
  put<std::uint64_t>(os, g.n_agents);
  put<std::uint64_t>(os, g.steps);
  for (const Adjacency* adj : {&g.spatial, &g.temporal})
    for (const auto& nb : *adj) {
      put<std::uint64_t>(os, nb.size());
      for (std::size_t u : nb) put<std::uint64_t>(os, u);
    }
  for (double v : g.features.values()) put<double>(os, v);
}

inline Graph read_graph(std::istream& is) {
  using checkpoint::detail::get;
  std::uint64_t V = 0, n = 0, steps = 0;
  if (!get(is, V) || !get(is, n) || !get(is, steps) || n * steps != V)
    throw checkpoint::format_error("graph: bad header");
  Graph g;
  g.n_agents = n;
  g.steps = steps;
  for (Adjacency* adj : {&g.spatial, &g.temporal}) {
    adj->resize(V);
    for (auto& nb : *adj) {
      std::uint64_t c = 0;
      if (!get(is, c)) throw checkpoint::format_error("graph: truncated edge list");
      nb.resize(c);
      for (auto& u : nb) {
        std::uint64_t x = 0;
        if (!get(is, x) || x >= V) throw checkpoint::format_error("graph: bad vertex id");
        u = x;
      }
    }
  }
  g.features = Matrix(V, n);
  for (double& v : g.features.values())
    if (!get(is, v)) throw checkpoint::format_error("graph: truncated features");
  return g;
}

}  // namespace lala::advisor
