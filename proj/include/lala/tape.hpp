#pragma once

// Dense-matrix reverse-mode differentiation.
//
// A Tape records every operation in creation order, which is already a
// topological order of the DAG, so backward() is a single reverse sweep.
// Nodes that do not depend on any differentiable leaf carry no backward rule
// and are skipped. Parameters live outside the tape; a tape leaf created with
// Tape::param() copies the value in and, after backward(), adds its gradient
// into Parameter::grad.

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lala/matrix.hpp"
#include "lala/rng.hpp"

namespace lala {

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols) {}

  void zero_grad() { grad = Matrix(value.rows(), value.cols()); }
};

namespace ad {

/// Probability clamp applied before any log/logit of a probability.
inline constexpr double kProbFloor = 1e-7;
inline constexpr double kProbCeil = 1.0 - 1e-7;

enum class Op {
  constant,
  variable,
  param,
  matmul,
  matmul_nt,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  relu,
  sigmoid,
  log,
  exp,
  neg,
  softmax_rows,
  log_softmax_rows,
  mean_rows,
  mean_all,
  sum_all,
  sum_cols,
  concat_cols,
  concat_rows,
  slice_cols,
  slice_rows,
  gather_rows,
  pick,
  neighbor_mean,
  clamp,
  layer_norm,
  dropout,
};

class Tape;

/// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  const Matrix& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  double item() const;
};

class Tape {
public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Matrix value) { return push(std::move(value), Op::constant, {}, nullptr, false); }
  /// Differentiable leaf owned by the tape (gradient read back via Var::grad()).
  Var variable(Matrix value) { return push(std::move(value), Op::variable, {}, nullptr, true); }
  /// Differentiable leaf bound to a Parameter.
  Var param(Parameter& p) {
    Var v = push(p.value, Op::param, {}, nullptr, true);
    nodes_[v.id].bound = &p;
    return v;
  }
  /// Parameter used as a constant: no gradient flows to it.
  Var frozen(const Parameter& p) { return constant(p.value); }

  /// Reverse sweep from a 1x1 node. A tape supports one backward pass.
  void backward(Var loss) {
    if (loss.tape != this) throw std::invalid_argument("backward: node from another tape");
    const Matrix& v = nodes_[loss.id].value;
    if (v.rows() != 1 || v.cols() != 1)
      throw dimension_error("backward: loss must be 1x1, got " + v.shape_string());
    if (backward_done_) throw std::logic_error("backward: tape already consumed");
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad = Matrix(1, 1, 1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.rule) n.rule(*this, i);
    }
    for (Node& n : nodes_)
      if (n.bound && !n.grad.empty()) n.bound->grad += n.grad;
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad(std::size_t id) const {
    static const Matrix empty;
    return nodes_[id].grad.empty() ? empty : nodes_[id].grad;
  }
  Op op(std::size_t id) const { return nodes_[id].op; }
  std::span<const std::size_t> parents(std::size_t id) const { return nodes_[id].parents; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient buffer of a node, allocated as zeros on first use;
  /// nullptr when the node does not need a gradient.
  Matrix* sink(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return &n.grad;
  }
  const Matrix& upstream(std::size_t id) const { return nodes_[id].grad; }

  Var push(Matrix value, Op op, std::vector<std::size_t> parents, Backward rule,
           bool leaf_requires_grad = false) {
    bool rg = leaf_requires_grad;
    for (std::size_t p : parents) rg = rg || nodes_[p].requires_grad;
    Node n;
    n.value = std::move(value);
    n.op = op;
    n.parents = std::move(parents);
    n.requires_grad = rg;
    if (rg) n.rule = std::move(rule);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

private:
  struct Node {
    Matrix value;
    Matrix grad;
    Op op = Op::constant;
    std::vector<std::size_t> parents;
    Backward rule;
    Parameter* bound = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape->value(id); }
inline const Matrix& Var::grad() const { return tape->grad(id); }
inline double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw dimension_error("item: node is " + v.shape_string());
  return v[0];
}

namespace detail {

inline void same_tape(Var a, Var b) {
  if (a.tape != b.tape || a.tape == nullptr)
    throw std::invalid_argument("operands belong to different tapes");
}

template <class F>
Var unary(Var a, Op op, F&& f, std::function<void(const Matrix& x, const Matrix& y,
                                                  const Matrix& g, Matrix& gx)> back) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.tape->push(std::move(y), op, {a.id},
                      [a, back = std::move(back)](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id))
                          back(t.value(a.id), t.value(self), t.upstream(self), *gx);
                      });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// linear algebra

inline Var matmul(Var a, Var b) {
  detail::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows())
    throw dimension_error("matmul: " + av.shape_string() + " * " + bv.shape_string());
  Matrix y(av.rows(), bv.cols());
  kernels::gemm_nn(av, bv, y, true);
  return a.tape->push(std::move(y), Op::matmul, {a.id, b.id}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    if (Matrix* ga = t.sink(a.id)) kernels::gemm_nt(g, t.value(b.id), *ga, true);
    if (Matrix* gb = t.sink(b.id)) kernels::gemm_tn(t.value(a.id), g, *gb, true);
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  detail::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols())
    throw dimension_error("matmul_nt: " + av.shape_string() + " * T(" + bv.shape_string() + ")");
  Matrix y(av.rows(), bv.rows());
  kernels::gemm_nt(av, bv, y, true);
  return a.tape->push(std::move(y), Op::matmul_nt, {a.id, b.id},
                      [a, b](Tape& t, std::size_t self) {
                        const Matrix& g = t.upstream(self);
                        if (Matrix* ga = t.sink(a.id)) kernels::gemm_nn(g, t.value(b.id), *ga, true);
                        if (Matrix* gb = t.sink(b.id)) kernels::gemm_tn(g, t.value(a.id), *gb, true);
                      });
}

// ---------------------------------------------------------------------------
// elementwise binary; b may be a 1 x cols row broadcast over a's rows

namespace detail {

inline bool row_broadcast(const Matrix& a, const Matrix& b) {
  return b.rows() == 1 && a.cols() == b.cols() && a.rows() != 1;
}

inline void check_binary(const Matrix& a, const Matrix& b, const char* name) {
  if (!a.same_shape(b) && !row_broadcast(a, b))
    throw dimension_error(std::string(name) + ": " + a.shape_string() + " vs " + b.shape_string());
}

inline void reduce_into(const Matrix& g, Matrix& gb, double sign) {
  if (g.same_shape(gb)) {
    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
    return;
  }
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const double* gr = g.data() + r * g.cols();
    for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += sign * gr[c];
  }
}

// y (op)= b, with b either y's shape or a single row repeated down y
template <class F>
void broadcast_apply(Matrix& y, const Matrix& b, F op) {
  if (b.same_shape(y)) {
    for (std::size_t i = 0; i < y.size(); ++i) op(y[i], b[i]);
    return;
  }
  const std::size_t cols = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double* yr = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) op(yr[c], b[c]);
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::check_binary(av, bv, "add");
  Matrix y = av;
  detail::broadcast_apply(y, bv, [](double& x, double z) { x += z; });
  return a.tape->push(std::move(y), Op::add, {a.id, b.id}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    if (Matrix* ga = t.sink(a.id)) *ga += g;
    if (Matrix* gb = t.sink(b.id)) detail::reduce_into(g, *gb, 1.0);
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::check_binary(av, bv, "sub");
  Matrix y = av;
  detail::broadcast_apply(y, bv, [](double& x, double z) { x -= z; });
  return a.tape->push(std::move(y), Op::sub, {a.id, b.id}, [a, b](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    if (Matrix* ga = t.sink(a.id)) *ga += g;
    if (Matrix* gb = t.sink(b.id)) detail::reduce_into(g, *gb, -1.0);
  });
}

/// Hadamard product.
inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  detail::check_binary(av, bv, "mul");
  const bool bc = !bv.same_shape(av);
  const std::size_t cols = av.cols();
  Matrix y = av;
  detail::broadcast_apply(y, bv, [](double& x, double z) { x *= z; });
  return a.tape->push(std::move(y), Op::mul, {a.id, b.id},
                      [a, b, bc, cols](Tape& t, std::size_t self) {
                        const Matrix& g = t.upstream(self);
                        const Matrix& x = t.value(a.id);
                        const Matrix& z = t.value(b.id);
                        if (Matrix* ga = t.sink(a.id))
                          for (std::size_t i = 0; i < g.size(); ++i)
                            (*ga)[i] += g[i] * (bc ? z[i % cols] : z[i]);
                        if (Matrix* gb = t.sink(b.id))
                          for (std::size_t i = 0; i < g.size(); ++i)
                            (*gb)[bc ? i % cols : i] += g[i] * x[i];
                      });
}

inline Var scale(Var a, double s) {
  return detail::unary(
      a, Op::scale, [s](double x) { return s * x; },
      [s](const Matrix&, const Matrix&, const Matrix& g, Matrix& gx) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
      });
}

inline Var add_scalar(Var a, double s) {
  return detail::unary(
      a, Op::add_scalar, [s](double x) { return x + s; },
      [](const Matrix&, const Matrix&, const Matrix& g, Matrix& gx) { gx += g; });
}

inline Var neg(Var a) {
  return detail::unary(
      a, Op::neg, [](double x) { return -x; },
      [](const Matrix&, const Matrix&, const Matrix& g, Matrix& gx) { gx -= g; });
}

// ---------------------------------------------------------------------------
// elementwise unary

inline Var relu(Var a) {
  return detail::unary(
      a, Op::relu, [](double x) { return x > 0.0 ? x : 0.0; },
      [](const Matrix& x, const Matrix&, const Matrix& g, Matrix& gx) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] > 0.0) gx[i] += g[i];
      });
}

inline double sigmoid_scalar(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var sigmoid(Var a) {
  return detail::unary(a, Op::sigmoid, sigmoid_scalar,
                       [](const Matrix&, const Matrix& y, const Matrix& g, Matrix& gx) {
                         for (std::size_t i = 0; i < g.size(); ++i)
                           gx[i] += g[i] * y[i] * (1.0 - y[i]);
                       });
}

/// Natural log; throws std::domain_error on any non-positive entry.
inline Var log(Var a) {
  for (double x : a.value().values())
    if (!(x > 0.0)) throw std::domain_error("log: non-positive argument " + std::to_string(x));
  return detail::unary(
      a, Op::log, [](double x) { return std::log(x); },
      [](const Matrix& x, const Matrix&, const Matrix& g, Matrix& gx) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / x[i];
      });
}

inline Var exp(Var a) {
  return detail::unary(
      a, Op::exp, [](double x) { return std::exp(x); },
      [](const Matrix&, const Matrix& y, const Matrix& g, Matrix& gx) {
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i];
      });
}

/// Clamp into [lo, hi]; gradient passes only where the input was inside.
inline Var clamp(Var a, double lo, double hi) {
  return detail::unary(
      a, Op::clamp, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](const Matrix& x, const Matrix&, const Matrix& g, Matrix& gx) {
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] >= lo && x[i] <= hi) gx[i] += g[i];
      });
}

inline Var clamp_prob(Var a) { return clamp(a, kProbFloor, kProbCeil); }

// ---------------------------------------------------------------------------
// row-wise

inline Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    auto out = y.row_span(r);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) s += (out[c] = std::exp(in[c] - m));
    for (double& v : out) v /= s;
  }
  return a.tape->push(std::move(y), Op::softmax_rows, {a.id}, [a](Tape& t, std::size_t self) {
    Matrix* gx = t.sink(a.id);
    if (!gx) return;
    const Matrix& y = t.value(self);
    const Matrix& g = t.upstream(self);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g(r, c) * y(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) (*gx)(r, c) += y(r, c) * (g(r, c) - dot);
    }
  });
}

inline Var log_softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    const double m = *std::max_element(in.begin(), in.end());
    double s = 0.0;
    for (double v : in) s += std::exp(v - m);
    const double lse = m + std::log(s);
    for (std::size_t c = 0; c < in.size(); ++c) y(r, c) = in[c] - lse;
  }
  return a.tape->push(std::move(y), Op::log_softmax_rows, {a.id},
                      [a](Tape& t, std::size_t self) {
                        Matrix* gx = t.sink(a.id);
                        if (!gx) return;
                        const Matrix& y = t.value(self);
                        const Matrix& g = t.upstream(self);
                        for (std::size_t r = 0; r < y.rows(); ++r) {
                          double gs = 0.0;
                          for (std::size_t c = 0; c < y.cols(); ++c) gs += g(r, c);
                          for (std::size_t c = 0; c < y.cols(); ++c)
                            (*gx)(r, c) += g(r, c) - std::exp(y(r, c)) * gs;
                        }
                      });
}

/// Per-row normalization to zero mean / unit variance, then gain * x + bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  const Matrix& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().rows() != 1 || gain.value().cols() != cols || !gain.value().same_shape(bias.value()))
    throw dimension_error("layer_norm: gain/bias must be 1x" + std::to_string(cols));
  Matrix xhat(rows, cols);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    auto in = xv.row_span(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) xhat(r, c) = (in[c] - mean) * inv_std[r];
  }
  Matrix y(rows, cols);
  const Matrix& gv = gain.value();
  const Matrix& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = gv[c] * xhat(r, c) + bv[c];
  return x.tape->push(
      std::move(y), Op::layer_norm, {x.id, gain.id, bias.id},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t,
                                                                             std::size_t self) {
        const Matrix& g = t.upstream(self);
        const Matrix& gv = t.value(gain.id);
        const std::size_t rows = g.rows(), cols = g.cols();
        if (Matrix* gg = t.sink(gain.id))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) (*gg)[c] += g(r, c) * xhat(r, c);
        if (Matrix* gb = t.sink(bias.id))
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) (*gb)[c] += g(r, c);
        if (Matrix* gx = t.sink(x.id)) {
          const double n = static_cast<double>(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              const double d = g(r, c) * gv[c];
              m1 += d;
              m2 += d * xhat(r, c);
            }
            m1 /= n;
            m2 /= n;
            for (std::size_t c = 0; c < cols; ++c)
              (*gx)(r, c) += inv_std[r] * (g(r, c) * gv[c] - m1 - xhat(r, c) * m2);
          }
        }
      });
}

/// Inverted dropout. Identity (same node) when not training or rate == 0.
inline Var dropout(Var x, double rate, Stream& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const Matrix& xv = x.value();
  Matrix mask(xv.rows(), xv.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < rate ? 0.0 : keep;
  Matrix y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return x.tape->push(std::move(y), Op::dropout, {x.id},
                      [x, mask = std::move(mask)](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(x.id)) {
                          const Matrix& g = t.upstream(self);
                          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
                        }
                      });
}

// ---------------------------------------------------------------------------
// reductions and reshaping

/// Column-wise mean over rows -> 1 x cols.
inline Var mean_rows(Var a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw std::domain_error("mean_rows: empty input");
  Matrix y(1, x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) y[c] += x(r, c);
  y *= 1.0 / static_cast<double>(x.rows());
  return a.tape->push(std::move(y), Op::mean_rows, {a.id}, [a](Tape& t, std::size_t self) {
    if (Matrix* gx = t.sink(a.id)) {
      const Matrix& g = t.upstream(self);
      const double inv = 1.0 / static_cast<double>(gx->rows());
      for (std::size_t r = 0; r < gx->rows(); ++r)
        for (std::size_t c = 0; c < gx->cols(); ++c) (*gx)(r, c) += g[c] * inv;
    }
  });
}

inline Var sum_all(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->push(Matrix(1, 1, s), Op::sum_all, {a.id}, [a](Tape& t, std::size_t self) {
    if (Matrix* gx = t.sink(a.id)) {
      const double g = t.upstream(self)[0];
      for (double& v : gx->values()) v += g;
    }
  });
}

inline Var mean_all(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw std::domain_error("mean_all: empty input");
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->push(Matrix(1, 1, s / static_cast<double>(n)), Op::mean_all, {a.id},
                      [a, n](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id)) {
                          const double g = t.upstream(self)[0] / static_cast<double>(n);
                          for (double& v : gx->values()) v += g;
                        }
                      });
}

/// Row sums -> rows x 1.
inline Var sum_cols(Var a) {
  const Matrix& x = a.value();
  Matrix y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (double v : x.row_span(r)) y[r] += v;
  return a.tape->push(std::move(y), Op::sum_cols, {a.id}, [a](Tape& t, std::size_t self) {
    if (Matrix* gx = t.sink(a.id)) {
      const Matrix& g = t.upstream(self);
      for (std::size_t r = 0; r < gx->rows(); ++r)
        for (double& v : gx->row_span(r)) v += g[r];
    }
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw std::domain_error("concat_cols: empty input");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.rows() != rows) throw dimension_error("concat_cols: row counts differ");
    cols += p.cols();
    ids.push_back(p.id);
  }
  Matrix y(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Matrix& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.row_span(r).begin(), v.row_span(r).end(), y.row_span(r).begin() + off);
    off += v.cols();
  }
  return parts[0].tape->push(std::move(y), Op::concat_cols, ids, [ids](Tape& t, std::size_t self) {
    const Matrix& g = t.upstream(self);
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t w = t.value(id).cols();
      if (Matrix* gp = t.sink(id))
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) (*gp)(r, c) += g(r, off + c);
      off += w;
    }
  });
}

inline Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw std::domain_error("concat_rows: empty input");
  const std::size_t cols = parts[0].cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    if (p.cols() != cols) throw dimension_error("concat_rows: column counts differ");
    rows += p.rows();
    ids.push_back(p.id);
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const Var& p : parts) data.insert(data.end(), p.value().values().begin(), p.value().values().end());
  return parts[0].tape->push(Matrix(rows, cols, std::move(data)), Op::concat_rows, ids,
                             [ids](Tape& t, std::size_t self) {
                               const Matrix& g = t.upstream(self);
                               std::size_t off = 0;
                               for (std::size_t id : ids) {
                                 const std::size_t n = t.value(id).size();
                                 if (Matrix* gp = t.sink(id))
                                   for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[off + i];
                                 off += n;
                               }
                             });
}

inline Var concat_rows(std::initializer_list<Var> parts) {
  return concat_rows(std::span<const Var>(parts.begin(), parts.size()));
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Matrix& x = a.value();
  if (start + count > x.cols()) throw dimension_error("slice_cols: out of range");
  Matrix y(x.rows(), count);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = x(r, start + c);
  return a.tape->push(std::move(y), Op::slice_cols, {a.id},
                      [a, start, count](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id)) {
                          const Matrix& g = t.upstream(self);
                          for (std::size_t r = 0; r < g.rows(); ++r)
                            for (std::size_t c = 0; c < count; ++c) (*gx)(r, start + c) += g(r, c);
                        }
                      });
}

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Matrix& x = a.value();
  if (start + count > x.rows()) throw dimension_error("slice_rows: out of range");
  std::vector<double> data(x.data() + start * x.cols(), x.data() + (start + count) * x.cols());
  return a.tape->push(Matrix(count, x.cols(), std::move(data)), Op::slice_rows, {a.id},
                      [a, start](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id)) {
                          const Matrix& g = t.upstream(self);
                          const std::size_t off = start * g.cols();
                          for (std::size_t i = 0; i < g.size(); ++i) (*gx)[off + i] += g[i];
                        }
                      });
}

/// Rows of a selected by index (repeats allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> index) {
  const Matrix& x = a.value();
  Matrix y(index.size(), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.rows()) throw dimension_error("gather_rows: index out of range");
    std::copy(x.row_span(index[i]).begin(), x.row_span(index[i]).end(), y.row_span(i).begin());
  }
  return a.tape->push(std::move(y), Op::gather_rows, {a.id},
                      [a, index = std::move(index)](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id)) {
                          const Matrix& g = t.upstream(self);
                          for (std::size_t i = 0; i < index.size(); ++i)
                            for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(index[i], c) += g(i, c);
                        }
                      });
}

/// One entry per row: y[r] = a(r, column[r]) -> rows x 1.
inline Var pick(Var a, std::vector<std::size_t> column) {
  const Matrix& x = a.value();
  if (column.size() != x.rows()) throw dimension_error("pick: one column index per row required");
  Matrix y(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (column[r] >= x.cols()) throw dimension_error("pick: column out of range");
    y[r] = x(r, column[r]);
  }
  return a.tape->push(std::move(y), Op::pick, {a.id},
                      [a, column = std::move(column)](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id)) {
                          const Matrix& g = t.upstream(self);
                          for (std::size_t r = 0; r < column.size(); ++r) (*gx)(r, column[r]) += g[r];
                        }
                      });
}

/// Row r of the output is the mean of a's rows listed in neighbors[r];
/// an empty list yields a zero row.
inline Var neighbor_mean(Var a, const std::vector<std::vector<std::size_t>>& neighbors) {
  const Matrix& x = a.value();
  Matrix y(neighbors.size(), x.cols());
  for (std::size_t r = 0; r < neighbors.size(); ++r) {
    const auto& nb = neighbors[r];
    if (nb.empty()) continue;
    const double inv = 1.0 / static_cast<double>(nb.size());
    for (std::size_t u : nb) {
      if (u >= x.rows()) throw dimension_error("neighbor_mean: index out of range");
      for (std::size_t c = 0; c < x.cols(); ++c) y(r, c) += inv * x(u, c);
    }
  }
  return a.tape->push(std::move(y), Op::neighbor_mean, {a.id},
                      [a, neighbors](Tape& t, std::size_t self) {
                        if (Matrix* gx = t.sink(a.id)) {
                          const Matrix& g = t.upstream(self);
                          for (std::size_t r = 0; r < neighbors.size(); ++r) {
                            const auto& nb = neighbors[r];
                            if (nb.empty()) continue;
                            const double inv = 1.0 / static_cast<double>(nb.size());
                            for (std::size_t u : nb)
                              for (std::size_t c = 0; c < g.cols(); ++c) (*gx)(u, c) += inv * g(r, c);
                          }
                        }
                      });
}

// ---------------------------------------------------------------------------
// conveniences

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

/// -log(sigmoid(x)) with the probability clamp applied.
inline Var neg_log_sigmoid(Var x) { return neg(log(clamp_prob(sigmoid(x)))); }

/// Row-wise Jensen-Shannon divergence (natural log) between distributions
/// stored in the rows of p and q -> rows x 1.
inline Var jsd_rows(Var p, Var q) {
  Var m = scale(add(p, q), 0.5);
  Var lm = log(clamp_prob(m));
  Var kl_p = sum_cols(mul(p, sub(log(clamp_prob(p)), lm)));
  Var kl_q = sum_cols(mul(q, sub(log(clamp_prob(q)), lm)));
  return scale(add(kl_p, kl_q), 0.5);
}

}  // namespace ad
}  // namespace lala
