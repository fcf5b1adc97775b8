#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lala/rng.hpp"
#include "lala/tape.hpp"

namespace lala {

using ParamRefs = std::vector<Parameter*>;

/// Glorot-uniform fill: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
inline void glorot_init(Parameter& p, Stream& rng) {
  const double fan_in = static_cast<double>(p.value.rows());
  const double fan_out = static_cast<double>(p.value.cols());
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : p.value.values()) v = rng.uniform(-a, a);
  p.zero_grad();
}

inline void zero_grad(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

inline void fill_params(std::span<Parameter* const> params, double v) {
  for (Parameter* p : params) p->value.fill(v);
}

/// How a network's parameters enter a tape.
enum class Grad { on, off };

inline ad::Var bind(ad::Tape& tape, Parameter& p, Grad g) {
  return g == Grad::on ? tape.param(p) : tape.frozen(p);
}

/// Affine map x W + b, weight stored in_features x out_features.
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, Stream& rng)
      : weight(name + ".weight", in, out), bias(name + ".bias", 1, out) {
    glorot_init(weight, rng);
  }

  std::size_t in_features() const { return weight.value.rows(); }
  std::size_t out_features() const { return weight.value.cols(); }

  ad::Var operator()(ad::Tape& tape, ad::Var x, Grad g = Grad::on) {
    return ad::add(ad::matmul(x, bind(tape, weight, g)), bind(tape, bias, g));
  }

  /// Tape-free evaluation.
  Matrix apply(const Matrix& x) const {
    Matrix y = matmul(x, weight.value);
    for (std::size_t r = 0; r < y.rows(); ++r)
      for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += bias.value[c];
    return y;
  }

  void collect(ParamRefs& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Adam moments for one parameter list; construct from the list it will update.
struct AdamState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::uint64_t step_count = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(std::span<Parameter* const> params, double lr) : learning_rate(lr) {
    for (const Parameter* p : params) {
      first_moment.emplace_back(p->value.rows(), p->value.cols());
      second_moment.emplace_back(p->value.rows(), p->value.cols());
    }
  }
};

/// One bias-corrected Adam update from the accumulated Parameter::grad.
inline void adam_step(std::span<Parameter* const> params, AdamState& s) {
  if (params.size() != s.first_moment.size())
    throw dimension_error("adam_step: parameter count does not match optimizer state");
  ++s.step_count;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    Matrix& m = s.first_moment[k];
    Matrix& v = s.second_moment[k];
    if (!p.grad.same_shape(p.value) || !m.same_shape(p.value))
      throw dimension_error("adam_step: shape mismatch for " + p.name);
    const double b1 = s.beta1, b2 = s.beta2, lr = s.learning_rate, eps = s.epsilon;
    const double* g = p.grad.data();
    double* pm = m.data();
    double* pv = v.data();
    double* w = p.value.data();
    for (std::size_t i = 0, n = p.value.size(); i < n; ++i) {
      pm[i] = b1 * pm[i] + (1.0 - b1) * g[i];
      pv[i] = b2 * pv[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (pm[i] / c1) / (std::sqrt(pv[i] / c2) + eps);
    }
  }
}

}  // namespace lala
