#pragma once

// Micro-level learner: an extended Q-network conditioned on latent codes of
// the other agents' recent moves, with a variational information-bottleneck
// encoder whose codes are also decoded into predictions of those agents'
// actions. One parameter set is shared by all (homogeneous) agents.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lala/env.hpp"
#include "lala/nn.hpp"
#include "lala/tape.hpp"

namespace lala::agent {

using ad::Tape;
using ad::Var;

struct AgentLossConfig {
  double gamma = 0.95;
  double rho1 = 1.0;   // action-prediction cross entropy
  double rho2 = 1e-3;  // compression (KL to the N(0, I) prior)
  double rho3 = 1e-3;  // action information, realized through the cross entropy
  double lambda = 0.3; // adversarial / advice weight

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in (0,1)");
    if (rho1 < 0 || rho2 < 0 || rho3 < 0 || lambda < 0)
      throw std::invalid_argument("loss weights must be non-negative");
  }
};

/// Linear epsilon decay from start to end over the first `fraction` of training.
struct EpsilonSchedule {
  double start = 1.0;
  double end = 0.05;
  double fraction = 0.6;

  double at(std::size_t episode, std::size_t total) const {
    const double horizon = fraction * static_cast<double>(total);
    if (horizon <= 0.0) return end;
    const double f = std::min(1.0, static_cast<double>(episode) / horizon);
    return start + (end - start) * f;
  }
};

struct AgentShape {
  std::size_t n_agents = 3;
  double side_length = 15.0;
  std::size_t encoder_hidden = 32;
  std::size_t latent = 16;
  std::size_t q_hidden1 = 300;
  std::size_t q_hidden2 = 200;

  std::size_t obs_dim() const { return nav::observation_size(n_agents); }
  /// Encoder input per other agent: target offsets, its previous and current offset.
  std::size_t transition_dim() const { return 2 * n_agents + 4; }
  std::size_t others() const { return n_agents - 1; }
};

/// Observation batch (B x obs_dim) rescaled so positions are in units of L.
inline Matrix scale_observations(const Matrix& obs, const AgentShape& shape) {
  return nav::normalize_observations(obs, shape.n_agents, shape.side_length);
}

/// Other-agent transition pairs extracted from an observation batch.
/// Row j*B + b holds agent b's view of its j-th other agent:
/// [target offsets (2N) | previous offset (2) | current offset (2)] / L.
inline Matrix other_transitions(const Matrix& obs, const AgentShape& shape) {
  const std::size_t n = shape.n_agents, m = shape.others(), B = obs.rows();
  if (obs.cols() != shape.obs_dim()) throw dimension_error("other_transitions: bad observation width");
  Matrix out(m * B, shape.transition_dim());
  const double inv = 1.0 / shape.side_length;
  const std::size_t cur0 = 2 * n, prev0 = 2 * n + 2 * m;
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t b = 0; b < B; ++b) {
      auto row = out.row_span(j * B + b);
      for (std::size_t c = 0; c < 2 * n; ++c) row[c] = obs(b, c) * inv;
      row[2 * n + 0] = obs(b, prev0 + 2 * j) * inv;
      row[2 * n + 1] = obs(b, prev0 + 2 * j + 1) * inv;
      row[2 * n + 2] = obs(b, cur0 + 2 * j) * inv;
      row[2 * n + 3] = obs(b, cur0 + 2 * j + 1) * inv;
    }
  return out;
}

inline Matrix stack_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) return {};
  Matrix out(rows.size(), rows[0].size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != out.cols()) throw dimension_error("stack_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), out.row_span(r).begin());
  }
  return out;
}

class AgentNet {
public:
  struct Encoded {
    Var mean;
    Var logvar;
  };

  AgentNet() = default;
  AgentNet(AgentShape shape, std::uint64_t seed) : shape_(shape) {
    Stream rng(seed, 0x6167656e74);
    const std::size_t n = shape.n_agents;
    enc_hidden_ = Linear("agent.enc.hidden", shape.transition_dim(), shape.encoder_hidden, rng);
    enc_mean_ = Linear("agent.enc.mean", shape.encoder_hidden, shape.latent, rng);
    enc_logvar_ = Linear("agent.enc.logvar", shape.encoder_hidden, shape.latent, rng);
    q1_ = Linear("agent.q.l1", shape.obs_dim() + shape.others() * shape.latent, shape.q_hidden1, rng);
    q2_ = Linear("agent.q.l2", shape.q_hidden1, shape.q_hidden2, rng);
    q3_ = Linear("agent.q.out", shape.q_hidden2, n, rng);
    decoder_ = Linear("agent.decoder", shape.latent, n, rng);
  }

  const AgentShape& shape() const { return shape_; }

  ParamRefs parameters() {
    ParamRefs out;
    for (Linear* l : {&enc_hidden_, &enc_mean_, &enc_logvar_, &q1_, &q2_, &q3_, &decoder_}) l->collect(out);
    return out;
  }
  ParamRefs encoder_parameters() {
    ParamRefs out;
    for (Linear* l : {&enc_hidden_, &enc_mean_, &enc_logvar_}) l->collect(out);
    return out;
  }

  Encoded encode(Tape& tape, Var transitions, Grad g = Grad::on) {
    Var h = ad::relu(enc_hidden_(tape, transitions, g));
    return {enc_mean_(tape, h, g), enc_logvar_(tape, h, g)};
  }

  /// Q-values (B x N) from raw observations and transition pairs (see other_transitions).
  /// The Q-network consumes the encoder means.
  Var q_forward(Tape& tape, const Matrix& obs, const Matrix& transitions, Grad g = Grad::on) {
    const std::size_t B = obs.rows(), m = shape_.others();
    if (obs.cols() != shape_.obs_dim() || transitions.rows() != m * B ||
        transitions.cols() != shape_.transition_dim())
      throw dimension_error("q_forward: observation/transition shape mismatch");
    Encoded enc = encode(tape, tape.constant(transitions), g);
    std::vector<Var> parts{tape.constant(scale_observations(obs, shape_))};
    for (std::size_t j = 0; j < m; ++j) parts.push_back(ad::slice_rows(enc.mean, j * B, B));
    Var x = ad::concat_cols(parts);
    Var h1 = ad::relu(q1_(tape, x, g));
    Var h2 = ad::relu(q2_(tape, h1, g));
    return q3_(tape, h2, g);
  }

  Var q_forward(Tape& tape, const Matrix& obs, Grad g = Grad::on) {
    return q_forward(tape, obs, other_transitions(obs, shape_), g);
  }

  /// softmax(Q) per row.
  Var policy(Tape& tape, const Matrix& obs, Grad g = Grad::on) {
    return ad::softmax_rows(q_forward(tape, obs, g));
  }

  Matrix q_values(const Matrix& obs) {
    Tape tape;
    return q_forward(tape, obs, Grad::off).value();
  }
  Matrix policy_values(const Matrix& obs) {
    Tape tape;
    return policy(tape, obs, Grad::off).value();
  }

  /// Latent means for transition rows (used by the mutual-information probe).
  Matrix latent_means(const Matrix& transitions) {
    Tape tape;
    return encode(tape, tape.constant(transitions), Grad::off).mean.value();
  }

  Var decode(Tape& tape, Var latent, Grad g = Grad::on) { return decoder_(tape, latent, g); }

private:
  AgentShape shape_;
  Linear enc_hidden_, enc_mean_, enc_logvar_;
  Linear q1_, q2_, q3_;
  Linear decoder_;
};

/// Epsilon-greedy: uniform action with probability epsilon, else argmax Q
/// (lowest index on ties).
inline std::size_t act(std::span<const double> q, double epsilon, Stream& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("act: epsilon outside [0,1]");
  if (epsilon > 0.0 && rng.uniform() < epsilon) return rng.index(q.size());
  return argmax(q);
}

struct Transition {
  std::size_t agent = 0;
  std::vector<double> obs;
  std::size_t action = 0;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;
  std::vector<std::size_t> other_actions;  // true actions of the other agents at this step
};

/// Fixed-capacity FIFO replay shared by all agents (entries keyed by agent).
class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity = 1500) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be > 0");
  }

  void push(Transition t) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

  /// Uniform sample with replacement.
  std::vector<const Transition*> sample(std::size_t count, Stream& rng) const {
    if (items_.empty()) throw std::logic_error("ReplayBuffer: sample from empty buffer");
    std::vector<const Transition*> out;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(&items_[rng.index(items_.size())]);
    return out;
  }

private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<Transition> items_;
};

struct Batch {
  Matrix obs;
  Matrix next_obs;
  std::vector<std::size_t> actions;
  std::vector<double> rewards;
  std::vector<char> done;
  std::vector<std::size_t> other_actions;  // j-major: [j * B + b]

  std::size_t size() const { return actions.size(); }
};

inline Batch make_batch(std::span<const Transition* const> items, std::size_t n_agents) {
  if (items.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t B = items.size(), m = n_agents - 1;
  std::vector<std::vector<double>> o, no;
  Batch b;
  b.other_actions.assign(m * B, 0);
  for (std::size_t k = 0; k < B; ++k) {
    const Transition& t = *items[k];
    o.push_back(t.obs);
    no.push_back(t.next_obs);
    b.actions.push_back(t.action);
    b.rewards.push_back(t.reward);
    b.done.push_back(t.done ? 1 : 0);
    if (t.other_actions.size() != m) throw dimension_error("make_batch: other_actions size");
    for (std::size_t j = 0; j < m; ++j) b.other_actions[j * B + k] = t.other_actions[j];
  }
  b.obs = stack_rows(o);
  b.next_obs = stack_rows(no);
  return b;
}

struct LossParts {
  Var total;
  Var td;
  Var cross_entropy;
  Var kl;
};

/// Bootstrapped targets y = r + gamma * (1 - done) * max_a Q(o', a), treated as constants.
inline std::vector<double> td_targets(AgentNet& net, const Batch& batch, double gamma) {
  const Matrix q_next = net.q_values(batch.next_obs);
  std::vector<double> y(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double boot = batch.done[b] ? 0.0 : *std::max_element(q_next.row_span(b).begin(),
                                                                   q_next.row_span(b).end());
    y[b] = batch.rewards[b] + gamma * boot;
  }
  return y;
}

/// Agent objective on one minibatch:
///   mean (y - Q(o, a))^2
///   + (rho1 + rho3) * mean_b sum_j CE(decoder(z_j), a_j)
///   + rho2 * mean_b sum_j KL(q(z_j | phi_j) || N(0, I))
///   + lambda * adversarial            (when supplied)
/// z_j is a reparameterized latent sample of the next-step transition pair
/// when `noise` is given, the latent mean otherwise.
inline LossParts agent_loss(Tape& tape, AgentNet& net, const Batch& batch, const AgentLossConfig& cfg,
                            Stream* noise, std::optional<Var> adversarial = std::nullopt) {
  if (batch.size() == 0) throw std::invalid_argument("agent_loss: empty batch");
  const AgentShape& shape = net.shape();
  const std::size_t B = batch.size();
  const double invB = 1.0 / static_cast<double>(B);

  const std::vector<double> y = td_targets(net, batch, cfg.gamma);
  Var q = net.q_forward(tape, batch.obs);
  Var q_taken = ad::pick(q, batch.actions);
  Var err = ad::sub(q_taken, tape.constant(Matrix::column(y)));
  Var td = ad::mean_all(ad::mul(err, err));

  const Matrix next_pairs = other_transitions(batch.next_obs, shape);
  AgentNet::Encoded enc = net.encode(tape, tape.constant(next_pairs));
  Var z = enc.mean;
  if (noise) {
    Matrix eps(enc.mean.rows(), enc.mean.cols());
    for (double& v : eps.values()) v = noise->normal();
    Var stdev = ad::exp(ad::scale(enc.logvar, 0.5));
    z = ad::add(enc.mean, ad::mul(stdev, tape.constant(std::move(eps))));
  }
  Var logp = ad::log_softmax_rows(net.decode(tape, z));
  Var ce = ad::scale(ad::sum_all(ad::pick(logp, batch.other_actions)), -invB);

  // 0.5 * sum(mu^2 + exp(lv) - 1 - lv)
  Var kl_terms = ad::sub(ad::add(ad::mul(enc.mean, enc.mean), ad::exp(enc.logvar)),
                         ad::add_scalar(enc.logvar, 1.0));
  Var kl = ad::scale(ad::sum_all(kl_terms), 0.5 * invB);

  Var total = ad::add(td, ad::add(ad::scale(ce, cfg.rho1 + cfg.rho3), ad::scale(kl, cfg.rho2)));
  if (adversarial) total = ad::add(total, ad::scale(*adversarial, cfg.lambda));
  return {total, td, ce, kl};
}

}  // namespace lala::agent
