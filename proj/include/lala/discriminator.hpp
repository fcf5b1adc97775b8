#pragma once

// Policy discriminator: a transformer encoder over a set of (state, action
// distribution) tokens with a prepended class token; the class token's final
// embedding is classified into the probability that the set came from the
// advisor rather than the agent. No positional encoding, so the judgement is
// a set function.

#include <cmath>
#include <cstdio>
#include <ostream>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lala/env.hpp"
#include "lala/nn.hpp"
#include "lala/tape.hpp"

namespace lala::disc {

using ad::Tape;
using ad::Var;

struct DiscShape {
  std::size_t n_agents = 3;
  double side_length = 15.0;
  std::size_t model_width = 64;
  std::size_t heads = 4;
  std::size_t layers = 3;
  std::size_t ff_width = 256;
  double dropout = 0.1;

  std::size_t obs_dim() const { return nav::observation_size(n_agents); }
  std::size_t token_dim() const { return obs_dim() + n_agents; }
};

/// Set judge (one probability per set) or per-pair judge (one per state-action pair).
enum class Kind { set, pair };

/// Dropout switch plus its stream; eval mode needs no stream.
struct Mode {
  bool training = false;
  Stream* rng = nullptr;

  static Mode eval() { return {}; }
  static Mode train(Stream& s) { return {true, &s}; }
};

class Discriminator {
public:
  Discriminator() = default;
  Discriminator(DiscShape shape, const std::string& name, std::uint64_t seed) : shape_(shape) {
    if (shape.model_width % shape.heads != 0)
      throw std::invalid_argument("Discriminator: model width must be divisible by heads");
    Stream rng(seed, 0x64697363);
    const std::size_t d = shape.model_width;
    input_ = Linear(name + ".input", shape.token_dim(), d, rng);
    cls_ = Parameter(name + ".cls", 1, d);
    for (double& v : cls_.value.values()) v = 0.02 * rng.normal();
    for (std::size_t l = 0; l < shape.layers; ++l) {
      const std::string p = name + ".layer" + std::to_string(l);
      Block b;
      b.q = Linear(p + ".q", d, d, rng);
      b.k = Linear(p + ".k", d, d, rng);
      b.v = Linear(p + ".v", d, d, rng);
      b.o = Linear(p + ".o", d, d, rng);
      b.ff1 = Linear(p + ".ff1", d, shape.ff_width, rng);
      b.ff2 = Linear(p + ".ff2", shape.ff_width, d, rng);
      b.ln1_gain = Parameter(p + ".ln1.gain", 1, d);
      b.ln1_bias = Parameter(p + ".ln1.bias", 1, d);
      b.ln2_gain = Parameter(p + ".ln2.gain", 1, d);
      b.ln2_bias = Parameter(p + ".ln2.bias", 1, d);
      b.ln1_gain.value.fill(1.0);
      b.ln2_gain.value.fill(1.0);
      blocks_.push_back(std::move(b));
    }
    classifier_ = Linear(name + ".classifier", d, 1, rng);
  }

  const DiscShape& shape() const { return shape_; }

  ParamRefs parameters() {
    ParamRefs out;
    input_.collect(out);
    out.push_back(&cls_);
    for (Block& b : blocks_) {
      for (Linear* l : {&b.q, &b.k, &b.v, &b.o, &b.ff1, &b.ff2}) l->collect(out);
      for (Parameter* p : {&b.ln1_gain, &b.ln1_bias, &b.ln2_gain, &b.ln2_bias}) out.push_back(p);
    }
    classifier_.collect(out);
    return out;
  }

  ParamRefs classifier_parameters() {
    ParamRefs out;
    classifier_.collect(out);
    return out;
  }

  /// Probability (1x1) that the set {(states_m, actions_m)} came from the advisor.
  Var judge(Tape& tape, const Matrix& states, Var actions, Grad g, Mode mode) {
    return run(tape, states, actions, g, mode, Kind::set);
  }

  /// One probability per (state, action) pair (M x 1); each pair is judged as
  /// its own singleton set.
  Var judge_pairs(Tape& tape, const Matrix& states, Var actions, Grad g, Mode mode) {
    return run(tape, states, actions, g, mode, Kind::pair);
  }

  Var judge(Tape& tape, const Matrix& states, Var actions, Grad g, Mode mode, Kind kind) {
    return run(tape, states, actions, g, mode, kind);
  }

  double judge_value(const Matrix& states, const Matrix& actions) {
    Tape tape;
    return judge(tape, states, tape.constant(actions), Grad::off, Mode::eval()).item();
  }

  double judge_pair_value(std::span<const double> state, std::span<const double> distribution) {
    Tape tape;
    return judge_pairs(tape, Matrix::row(state), tape.constant(Matrix::row(distribution)), Grad::off,
                       Mode::eval())
        .item();
  }

private:
  struct Block {
    Linear q, k, v, o, ff1, ff2;
    Parameter ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  };

  Var run(Tape& tape, const Matrix& states, Var actions, Grad g, Mode mode, Kind kind) {
    const std::size_t M = states.rows();
    if (M == 0) throw std::invalid_argument("judge: empty sample set");
    if (states.cols() != shape_.obs_dim() || actions.rows() != M || actions.cols() != shape_.n_agents)
      throw dimension_error("judge: states/actions shape mismatch");
    if (mode.training && !mode.rng) throw std::invalid_argument("judge: training mode needs a dropout stream");

    Var s = tape.constant(nav::normalize_observations(states, shape_.n_agents, shape_.side_length));
    Var tokens = input_(tape, ad::concat_cols({s, actions}), g);
    Var base = ad::concat_rows({bind(tape, cls_, g), tokens});  // row 0 = CLS, row m+1 = pair m

    // Token layout: one group per judged set, each led by its own CLS copy.
    std::vector<std::size_t> order, cls_rows;
    if (kind == Kind::set) {
      cls_rows.push_back(0);
      for (std::size_t r = 0; r <= M; ++r) order.push_back(r);
    } else {
      for (std::size_t m = 0; m < M; ++m) {
        cls_rows.push_back(order.size());
        order.push_back(0);
        order.push_back(m + 1);
      }
    }
    Var x = kind == Kind::set ? base : ad::gather_rows(base, order);
    std::optional<Var> mask;
    if (kind == Kind::pair && M > 1) {
      const std::size_t T = order.size();
      Matrix mk(T, T, -1e9);
      for (std::size_t r = 0; r < T; ++r)
        for (std::size_t c = 0; c < T; ++c)
          if (r / 2 == c / 2) mk(r, c) = 0.0;
      mask = tape.constant(std::move(mk));
    }

    for (Block& b : blocks_) {
      Var att = attention(tape, b, x, mask, g, mode);
      x = ad::layer_norm(ad::add(x, drop(att, mode)), bind(tape, b.ln1_gain, g), bind(tape, b.ln1_bias, g));
      Var ff = b.ff2(tape, drop(ad::relu(b.ff1(tape, x, g)), mode), g);
      x = ad::layer_norm(ad::add(x, drop(ff, mode)), bind(tape, b.ln2_gain, g), bind(tape, b.ln2_bias, g));
    }
    Var cls_out = ad::gather_rows(x, cls_rows);
    return ad::clamp_prob(ad::sigmoid(classifier_(tape, cls_out, g)));
  }

  Var drop(Var x, Mode mode) {
    if (!mode.training) return x;
    return ad::dropout(x, shape_.dropout, *mode.rng, true);
  }

  Var attention(Tape& tape, Block& b, Var x, const std::optional<Var>& mask, Grad g, Mode mode) {
    const std::size_t dh = shape_.model_width / shape_.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = b.q(tape, x, g), k = b.k(tape, x, g), v = b.v(tape, x, g);
    std::vector<Var> heads;
    for (std::size_t h = 0; h < shape_.heads; ++h) {
      Var qh = ad::slice_cols(q, h * dh, dh);
      Var kh = ad::slice_cols(k, h * dh, dh);
      Var vh = ad::slice_cols(v, h * dh, dh);
      Var scores = ad::scale(ad::matmul_nt(qh, kh), scale);
      if (mask) scores = ad::add(scores, *mask);
      Var weights = drop(ad::softmax_rows(scores), mode);
      heads.push_back(ad::matmul(weights, vh));
    }
    return b.o(tape, ad::concat_cols(heads), g);
  }

  DiscShape shape_;
  Linear input_;
  Parameter cls_;
  std::vector<Block> blocks_;
  Linear classifier_;
};

inline Var mean_log(Var p) { return ad::mean_all(ad::log(ad::clamp_prob(p))); }
inline Var mean_log1m(Var p) {
  return ad::mean_all(ad::log(ad::clamp_prob(ad::add_scalar(ad::neg(p), 1.0))));
}

/// -[log D(advisor) + log(1 - D(agent))] on shared states; trains the
/// discriminator only (both action sets enter as constants). For Kind::pair
/// the log terms are averaged over the individual pairs.
inline Var disc_loss(Tape& tape, Discriminator& d, Kind kind, const Matrix& states, const Matrix& advisor_actions,
                     const Matrix& agent_actions, Mode mode) {
  Var da = d.judge(tape, states, tape.constant(advisor_actions), Grad::on, mode, kind);
  Var dg = d.judge(tape, states, tape.constant(agent_actions), Grad::on, mode, kind);
  return ad::neg(ad::add(mean_log(da), mean_log1m(dg)));
}

/// log(1 - D(agent set)) with the discriminator frozen; gradient reaches the
/// agent through `agent_actions`.
inline Var adversarial_term(Tape& tape, Discriminator& d, Kind kind, const Matrix& states, Var agent_actions) {
  return mean_log1m(d.judge(tape, states, agent_actions, Grad::off, Mode::eval(), kind));
}

/// -log D(advisor set) with the discriminator frozen; gradient reaches the
/// advisor through `advice`.
inline Var boost_term(Tape& tape, Discriminator& d, Kind kind, const Matrix& states, Var advice) {
  return ad::neg(mean_log(d.judge(tape, states, advice, Grad::off, Mode::eval(), kind)));
}

/// Debug dump: one CSV row per judged set, "set,probability,pairs" where
/// pairs is a quoted list of state|distribution entries.
inline void dump_judgements(std::ostream& os, std::span<const Matrix> states, std::span<const Matrix> actions,
                            std::span<const double> probability) {
  if (states.size() != actions.size() || states.size() != probability.size())
    throw std::invalid_argument("dump_judgements: inputs must align");
  os << "set,probability,pairs\n";
  char buf[32];
  for (std::size_t k = 0; k < states.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", probability[k]);
    os << k << ',' << buf << ",\"";
    for (std::size_t r = 0; r < states[k].rows(); ++r) {
      if (r) os << ';';
      for (std::size_t c = 0; c < states[k].cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", states[k](r, c));
        os << (c ? " " : "") << buf;
      }
      os << '|';
      for (std::size_t c = 0; c < actions[k].cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", actions[k](r, c));
        os << (c ? " " : "") << buf;
      }
    }
    os << "\"\n";
  }
}

}  // namespace lala::disc
