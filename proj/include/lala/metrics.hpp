#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "lala/advisor.hpp"
#include "lala/env.hpp"
#include "lala/nn.hpp"
#include "lala/tape.hpp"

namespace lala::metrics {

namespace detail {
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}
}  // namespace detail

/// Neighbor-averaged coordination loss of the distributions (rows follow the
/// graph's vertex order):
///   mean_v [ mean_{u in N_t(v)} -log s(p_v.p_u) + mean_{w in N_s(v)} -log s(-p_v.p_w) ]
/// An empty neighbor set contributes 0.
inline double coordination_loss(const advisor::Graph& g, const Matrix& dist) {
  if (dist.rows() != g.vertex_count()) throw dimension_error("coordination_loss: one row per vertex required");
  if (g.vertex_count() == 0) return 0.0;
  double total = 0.0;
  for (std::size_t v = 0; v < g.vertex_count(); ++v) {
    auto pv = dist.row_span(v);
    double tm = 0.0, sp = 0.0;
    for (std::size_t u : g.temporal[v]) tm += detail::softplus(-detail::dot(pv, dist.row_span(u)));
    for (std::size_t w : g.spatial[v]) sp += detail::softplus(detail::dot(pv, dist.row_span(w)));
    if (!g.temporal[v].empty()) total += tm / static_cast<double>(g.temporal[v].size());
    if (!g.spatial[v].empty()) total += sp / static_cast<double>(g.spatial[v].size());
  }
  return total / static_cast<double>(g.vertex_count());
}

inline double success_rate(std::span<const nav::EpisodeRecord> episodes) {
  if (episodes.empty()) throw std::invalid_argument("success_rate: no episodes");
  double s = 0.0;
  for (const auto& e : episodes) s += e.success ? 1.0 : 0.0;
  return s / static_cast<double>(episodes.size());
}

inline double normalized_time(std::span<const nav::EpisodeRecord> episodes, const nav::EnvConfig& cfg) {
  if (episodes.empty()) throw std::invalid_argument("normalized_time: no episodes");
  double s = 0.0;
  for (const auto& e : episodes) s += nav::navigation_time(e, cfg);
  return s / static_cast<double>(episodes.size());
}

struct MineConfig {
  std::size_t hidden = 64;
  std::size_t steps = 2000;
  std::size_t batch = 256;
  double learning_rate = 1e-3;
  double ema_rate = 0.99;
  double smoothing_tail = 0.25;  // fraction of final steps averaged into the reported bound
  std::size_t eval_every = 20;
  std::uint64_t seed = 0;
};

/// Donsker-Varadhan statistics network T(z, a).
struct MineNet {
  Linear l1, l2, out;

  MineNet(std::size_t in, std::size_t hidden, Stream& rng)
      : l1("mine.l1", in, hidden, rng), l2("mine.l2", hidden, hidden, rng), out("mine.out", hidden, 1, rng) {}

  ad::Var operator()(ad::Tape& tape, ad::Var x, Grad g = Grad::on) {
    return out(tape, ad::relu(l2(tape, ad::relu(l1(tape, x, g)), g)), g);
  }

  ParamRefs parameters() {
    ParamRefs p;
    l1.collect(p);
    l2.collect(p);
    out.collect(p);
    return p;
  }
};

/// MINE lower bound on I(z; a) in nats, clamped at 0.
///
/// Trains T on E_joint[T] - log E_marg[e^T] with shuffled-pair negatives and
/// the moving-average gradient correction; reports the full-sample bound
/// averaged over the final `smoothing_tail` of training.
inline double mine_estimate(const Matrix& z, const Matrix& a, const MineConfig& cfg = {}) {
  const std::size_t P = z.rows();
  if (a.rows() != P) throw dimension_error("mine_estimate: z and a must be paired");
  if (P < 2) throw std::invalid_argument("mine_estimate: need at least two pairs");
  Stream rng(cfg.seed, 0x6d696e65);
  const std::size_t dz = z.cols(), da = a.cols();
  MineNet net(dz + da, cfg.hidden, rng);
  ParamRefs params = net.parameters();
  AdamState adam(params, cfg.learning_rate);

  auto pack = [&](std::span<const std::size_t> zi, std::span<const std::size_t> ai) {
    Matrix x(zi.size(), dz + da);
    for (std::size_t r = 0; r < zi.size(); ++r) {
      std::copy(z.row_span(zi[r]).begin(), z.row_span(zi[r]).end(), x.row_span(r).begin());
      std::copy(a.row_span(ai[r]).begin(), a.row_span(ai[r]).end(), x.row_span(r).begin() + dz);
    }
    return x;
  };

  std::vector<std::size_t> all(P);
  std::iota(all.begin(), all.end(), 0);
  std::vector<std::size_t> shuffled = all;
  for (std::size_t i = P - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.index(i + 1)]);
  const Matrix joint_all = pack(all, all);
  const Matrix marg_all = pack(all, shuffled);

  auto bound = [&]() {
    ad::Tape tape;
    const Matrix tj = net(tape, tape.constant(joint_all), Grad::off).value();
    const Matrix tm = net(tape, tape.constant(marg_all), Grad::off).value();
    double mj = 0.0;
    for (double v : tj.values()) mj += v;
    mj /= static_cast<double>(P);
    const double mx = *std::max_element(tm.values().begin(), tm.values().end());
    double s = 0.0;
    for (double v : tm.values()) s += std::exp(v - mx);
    return mj - (mx + std::log(s / static_cast<double>(P)));
  };

  const std::size_t B = std::min(cfg.batch, P);
  const std::size_t tail_start = cfg.steps - static_cast<std::size_t>(cfg.smoothing_tail * cfg.steps);
  double ema = 1.0;
  bool ema_init = false;
  double acc = 0.0;
  std::size_t acc_n = 0;
  std::vector<std::size_t> zi(B), ai(B);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (std::size_t k = 0; k < B; ++k) zi[k] = rng.index(P);
    for (std::size_t k = 0; k < B; ++k) ai[k] = rng.index(P);
    ad::Tape tape;
    ad::Var tj = net(tape, tape.constant(pack(zi, zi)));
    ad::Var et = ad::mean_all(ad::exp(net(tape, tape.constant(pack(zi, ai)))));
    const double et_val = et.item();
    ema = ema_init ? cfg.ema_rate * ema + (1.0 - cfg.ema_rate) * et_val : et_val;
    ema_init = true;
    // gradient of log E[e^T] approximated by grad E[e^T] / ema
    ad::Var loss = ad::neg(ad::sub(ad::mean_all(tj), ad::scale(et, 1.0 / ema)));
    zero_grad(params);
    tape.backward(loss);
    adam_step(params, adam);
    if (step >= tail_start && (step - tail_start) % cfg.eval_every == 0) {
      acc += bound();
      ++acc_n;
    }
  }
  const double est = acc_n ? acc / static_cast<double>(acc_n) : bound();
  return std::max(0.0, est);
}

/// One-hot rows for integer labels.
inline Matrix one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Matrix m(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) m(r, labels[r]) = 1.0;
  return m;
}

}  // namespace lala::metrics
