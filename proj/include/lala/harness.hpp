#pragma once

// End-to-end training loop: rollouts, state/decision buffers, and the
// interleaved discriminator, agent and advisor updates; plus evaluation and
// run artifacts.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lala/advisor.hpp"
#include "lala/agent.hpp"
#include "lala/checkpoint.hpp"
#include "lala/config.hpp"
#include "lala/discriminator.hpp"
#include "lala/env.hpp"
#include "lala/metrics.hpp"
#include "lala/variants.hpp"

namespace lala::harness {

namespace fs = std::filesystem;
using ad::Tape;
using ad::Var;

/// One recorded state of one agent, with the decision it emitted there.
struct StateRecord {
  std::vector<double> obs;
  std::vector<double> decision;
  std::size_t episode = 0;
  std::size_t step = 0;  // 0-based step within the episode
  std::size_t agent = 0;
};

/// Fixed-capacity ring of state records (oldest overwritten first).
class StateBuffer {
public:
  explicit StateBuffer(std::size_t capacity = 5000) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("StateBuffer: capacity must be > 0");
  }
  void push(StateRecord r) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(r));
    } else {
      items_[head_] = std::move(r);
      head_ = (head_ + 1) % capacity_;
    }
  }
  std::size_t size() const { return items_.size(); }
  const StateRecord& operator[](std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

private:
  std::size_t capacity_;
  std::size_t head_ = 0;
  std::vector<StateRecord> items_;
};

/// A retained episode graph with the advisor's current advice on it.
struct GraphEntry {
  std::size_t episode = 0;
  advisor::Graph graph;
  Matrix advice;
};
using GraphBuffer = std::deque<GraphEntry>;

/// Vertex identity that survives buffer eviction: (episode, t * N + agent).
struct VertexRef {
  std::size_t episode = 0;
  std::size_t vertex = 0;
  bool operator==(const VertexRef&) const = default;
};

struct StateSample {
  Matrix states;                  // M x obs_dim
  std::vector<VertexRef> vertices;
  std::vector<std::size_t> slots; // index into the graph buffer per row
  std::vector<std::size_t> records;
};

class sampling_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Uniform sample of M records whose episodes still have a retained graph.
/// Without replacement when the eligible pool holds at least M records.
inline StateSample sample_states(const StateBuffer& buffer, const GraphBuffer& graphs, std::size_t M, Stream& rng) {
  if (M == 0) throw std::invalid_argument("sample_states: M must be > 0");
  std::map<std::size_t, std::size_t> slot_of;
  for (std::size_t s = 0; s < graphs.size(); ++s) slot_of[graphs[s].episode] = s;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < buffer.size(); ++i)
    if (slot_of.contains(buffer[i].episode)) pool.push_back(i);
  if (pool.empty()) throw sampling_error("sample_states: no records from retained episodes");

  std::vector<std::size_t> pick;
  if (pool.size() >= M) {
    for (std::size_t k = 0; k < M; ++k) {
      std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
      pick.push_back(pool[k]);
    }
  } else {
    for (std::size_t k = 0; k < M; ++k) pick.push_back(pool[rng.index(pool.size())]);
  }

  StateSample out;
  out.states = Matrix(M, buffer[pick[0]].obs.size());
  for (std::size_t k = 0; k < M; ++k) {
    const StateRecord& r = buffer[pick[k]];
    const std::size_t slot = slot_of.at(r.episode);
    const advisor::Graph& g = graphs[slot].graph;
    std::copy(r.obs.begin(), r.obs.end(), out.states.row_span(k).begin());
    out.vertices.push_back({r.episode, g.vertex(r.agent, r.step)});
    out.slots.push_back(slot);
    out.records.push_back(pick[k]);
  }
  return out;
}

/// Advice rows for a sample, taken from each graph's cached advice.
inline Matrix sampled_advice(const StateSample& s, const GraphBuffer& graphs) {
  const std::size_t n = graphs.front().advice.cols();
  Matrix out(s.vertices.size(), n);
  for (std::size_t k = 0; k < s.vertices.size(); ++k) {
    auto src = graphs[s.slots[k]].advice.row_span(s.vertices[k].vertex);
    std::copy(src.begin(), src.end(), out.row_span(k).begin());
  }
  return out;
}

struct UpdateCounts {
  std::size_t agent = 0;
  std::size_t discriminator = 0;
  std::size_t advisor = 0;       // advisor optimizer steps
  std::size_t boost = 0;         // advisor steps that included the boost term
  std::size_t adversarial = 0;   // agent steps that included the discriminator term
  std::size_t distillation = 0;  // agent steps that included the KDA term
};

struct IntervalRow {
  std::size_t episode = 0;  // last episode (1-based) covered by the row
  double reward_mean = 0.0;
  double success = 0.0;
  double norm_time = 0.0;
  double coloss_agent = 0.0;
  std::optional<double> coloss_advice;
  std::optional<double> mi_estimate;
};

struct MiProbe {
  std::size_t episode = 0;
  double estimate = 0.0;
};

struct RunResult {
  std::vector<nav::EpisodeRecord> episodes;
  std::vector<IntervalRow> rows;
  std::vector<MiProbe> probes;
  UpdateCounts counts;
};

inline std::string metrics_csv(std::span<const IntervalRow> rows) {
  std::string out = "episode,reward_mean,success,norm_time,coloss_agent,coloss_advice,mi_estimate\n";
  auto num = [](double v) { return detail::fmt_double(v); };
  for (const IntervalRow& r : rows) {
    out += std::to_string(r.episode) + "," + num(r.reward_mean) + "," + num(r.success) + "," + num(r.norm_time) +
           "," + num(r.coloss_agent) + "," + (r.coloss_advice ? num(*r.coloss_advice) : "") + "," +
           (r.mi_estimate ? num(*r.mi_estimate) : "") + "\n";
  }
  return out;
}

inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t purpose, std::size_t episode) {
  return Stream(seed, purpose).fork(episode)();
}

inline constexpr std::uint64_t kTrainEnv = 0x747261696e;
inline constexpr std::uint64_t kEvalEnv = 0x6576616c;

/// (latent mean, true action) pairs from the most recent transitions: each
/// other agent's post-step transition paired with the action it took.
inline std::pair<Matrix, Matrix> mi_pairs(agent::AgentNet& net, std::span<const agent::Transition* const> recent,
                                          std::size_t limit) {
  const agent::AgentShape& shape = net.shape();
  std::vector<std::vector<double>> obs;
  std::vector<std::size_t> actions;
  for (const agent::Transition* t : recent) {
    if (obs.size() * shape.others() >= limit) break;
    obs.push_back(t->next_obs);
    for (std::size_t a : t->other_actions) actions.push_back(a);
  }
  if (obs.empty()) return {};
  const Matrix trans = agent::other_transitions(agent::stack_rows(obs), shape);
  // other_transitions is j-major; reorder actions to match
  const std::size_t B = obs.size(), m = shape.others();
  std::vector<std::size_t> labels(m * B);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t j = 0; j < m; ++j) labels[j * B + b] = actions[b * m + j];
  return {net.latent_means(trans), metrics::one_hot(labels, shape.n_agents)};
}

class Trainer {
public:
  explicit Trainer(TrainConfig cfg)
      : cfg_(std::move(cfg)),
        wiring_(cfg_.wiring()),
        net_(cfg_.agent_shape(), Stream(cfg_.seed, 0x6e6574)()),
        agent_params_(net_.parameters()),
        agent_adam_(agent_params_, cfg_.lr_agent),
        replay_(cfg_.replay_size),
        explore_(cfg_.seed, 0x65787031),
        replay_rng_(cfg_.seed, 0x72706c79),
        sample_rng_(cfg_.seed, 0x73616d70),
        dropout_rng_(cfg_.seed, 0x64726f70),
        latent_rng_(cfg_.seed, 0x6c61746e) {
    cfg_.validate();
    const std::size_t n = cfg_.env.n_agents;
    if (wiring_.advisor) {
      advisor_ = std::make_unique<advisor::DualGcnParams>(n, cfg_.gcn_layers, Stream(cfg_.seed, 0x616476)());
      advisor_params_ = advisor_->parameters();
      advisor_adam_ = std::make_unique<AdamState>(advisor_params_, cfg_.lr_advisor);
      for (std::size_t i = 0; i < n; ++i) states_.emplace_back(cfg_.state_buffer);
    }
    if (wiring_.has_discriminator()) {
      disc::DiscShape shape{n, cfg_.env.side_length, cfg_.disc_width, cfg_.disc_heads,
                            cfg_.disc_layers, cfg_.disc_ff, cfg_.disc_dropout};
      discs_.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        discs_.emplace_back(shape, "disc" + std::to_string(i), Stream(cfg_.seed, 0x6463).fork(i)());
        disc_params_.push_back(discs_.back().parameters());
      }
      for (std::size_t i = 0; i < n; ++i) disc_adam_.emplace_back(disc_params_[i], cfg_.lr_disc);
      disc_updates_.assign(n, 0);
    }
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainConfig& config() const { return cfg_; }
  agent::AgentNet& agent() { return net_; }
  advisor::DualGcnParams* advisor_params() { return advisor_.get(); }
  std::vector<disc::Discriminator>& discriminators() { return discs_; }
  const GraphBuffer& graphs() const { return graphs_; }
  const std::vector<StateBuffer>& state_buffers() const { return states_; }
  const UpdateCounts& counts() const { return result_.counts; }

  /// Optional per-step trace sinks.
  void set_trace(nav::TraceWriter* w) { trace_ = w; }

  RunResult run() {
    for (std::size_t e = 0; e < cfg_.episodes; ++e) run_episode(e);
    flush_interval(cfg_.episodes);
    return result_;
  }

  /// Runs one training episode (0-based index); exposed for step-wise tests.
  void run_episode(std::size_t episode) {
    const std::size_t n = cfg_.env.n_agents;
    const double eps = cfg_.epsilon.at(episode, cfg_.episodes);
    nav::WorldState state = nav::reset(cfg_.env, episode_seed(cfg_.seed, kTrainEnv, episode));
    if (trace_) trace_->begin(episode, state);
    std::vector<std::vector<double>> decisions;
    double reward_sum = 0.0;
    nav::EpisodeRecord rec;

    for (std::size_t t = 0; !state.done; ++t) {
      std::vector<std::vector<double>> obs(n);
      for (std::size_t i = 0; i < n; ++i) obs[i] = nav::observe(state, i, cfg_.env);
      const Matrix obs_m = agent::stack_rows(obs);
      const Matrix q = net_.q_values(obs_m);
      const Matrix pi = softmax_values(q);
      std::vector<std::size_t> actions(n);
      for (std::size_t i = 0; i < n; ++i) {
        actions[i] = agent::act(q.row_span(i), eps, explore_);
        decisions.emplace_back(pi.row_span(i).begin(), pi.row_span(i).end());
        if (!states_.empty()) states_[i].push({obs[i], decisions.back(), episode, t, i});
      }

      const bool update_now = (++global_step_ % cfg_.update_every) == 0;
      std::vector<std::optional<StateSample>> samples(n);
      if (update_now && wiring_.advisor && !graphs_.empty()) {
        for (std::size_t i = 0; i < n; ++i)
          if (states_[i].size() > cfg_.warmup) samples[i] = sample_states(states_[i], graphs_, cfg_.sample_size, sample_rng_);
      }
      if (update_now && wiring_.has_discriminator()) update_discriminators(samples);

      auto [next, res] = nav::step(state, actions, cfg_.env);
      if (trace_) trace_->write(episode, t + 1, next, actions, res);
      for (std::size_t i = 0; i < n; ++i) {
        agent::Transition tr;
        tr.agent = i;
        tr.obs = obs[i];
        tr.action = actions[i];
        tr.reward = res.rewards[i];
        tr.next_obs = nav::observe(next, i, cfg_.env);
        tr.done = res.done;
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) tr.other_actions.push_back(actions[j]);
        replay_.push(std::move(tr));
        reward_sum += res.rewards[i];
      }
      if (update_now && replay_.size() >= cfg_.batch_size) update_agent(samples);
      if (res.success && !rec.success) {
        rec.success = true;
        rec.success_step = t + 1;
      }
      rec.steps = t + 1;
      state = std::move(next);
    }
    rec.reward_mean = reward_sum / static_cast<double>(n);
    end_episode(episode, rec, decisions);
  }

private:
  static Matrix softmax_values(const Matrix& q) {
    Tape tape;
    return ad::softmax_rows(tape.constant(q)).value();
  }

  void update_discriminators(const std::vector<std::optional<StateSample>>& samples) {
    for (std::size_t i = 0; i < discs_.size(); ++i) {
      if (!samples[i]) continue;
      const Matrix agent_pi = net_.policy_values(samples[i]->states);
      const Matrix advice = sampled_advice(*samples[i], graphs_);
      Tape tape;
      Var loss = disc::disc_loss(tape, discs_[i], wiring_.kind(), samples[i]->states, advice, agent_pi,
                                 disc::Mode::train(dropout_rng_));
      zero_grad(disc_params_[i]);
      tape.backward(loss);
      adam_step(disc_params_[i], disc_adam_[i]);
      ++disc_updates_[i];
      ++result_.counts.discriminator;
    }
  }

  void update_agent(const std::vector<std::optional<StateSample>>& samples) {
    const auto items = replay_.sample(cfg_.batch_size, replay_rng_);
    const agent::Batch batch = agent::make_batch(items, cfg_.env.n_agents);
    Tape tape;
    std::vector<Var> terms;
    bool adversarial = false, distill = false;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!samples[i]) continue;
      if (wiring_.has_discriminator() && disc_updates_[i] > 0) {
        Var pi = net_.policy(tape, samples[i]->states);
        terms.push_back(disc::adversarial_term(tape, discs_[i], wiring_.kind(), samples[i]->states, pi));
        adversarial = true;
      } else if (wiring_.kda) {
        Var pi = net_.policy(tape, samples[i]->states);
        terms.push_back(baselines::kda_term(tape, pi, sampled_advice(*samples[i], graphs_)));
        distill = true;
      }
    }
    std::optional<Var> extra;
    if (!terms.empty()) extra = ad::scale(ad::sum_all(ad::concat_rows(terms)), 1.0 / static_cast<double>(terms.size()));
    agent::LossParts parts = agent::agent_loss(tape, net_, batch, cfg_.loss, &latent_rng_, extra);
    zero_grad(agent_params_);
    tape.backward(parts.total);
    adam_step(agent_params_, agent_adam_);
    ++result_.counts.agent;
    if (adversarial) ++result_.counts.adversarial;
    if (distill) ++result_.counts.distillation;
  }

  void end_episode(std::size_t episode, const nav::EpisodeRecord& rec,
                   const std::vector<std::vector<double>>& decisions) {
    const std::size_t n = cfg_.env.n_agents;
    Matrix feats(decisions.size(), n);
    for (std::size_t r = 0; r < decisions.size(); ++r)
      std::copy(decisions[r].begin(), decisions[r].end(), feats.row_span(r).begin());
    advisor::Graph graph = advisor::build_graph(feats, n);
    interval_.coloss_agent += metrics::coordination_loss(graph, graph.features);

    if (wiring_.advisor) {
      graphs_.push_back({episode, std::move(graph), Matrix()});
      while (graphs_.size() > cfg_.graph_buffer) graphs_.pop_front();
      refresh_advice();
      train_advisor();
      refresh_advice();
      const GraphEntry& last = graphs_.back();
      interval_.coloss_advice += metrics::coordination_loss(last.graph, last.advice);
    }

    result_.episodes.push_back(rec);
    interval_.reward += rec.reward_mean;
    interval_.success += rec.success ? 1.0 : 0.0;
    interval_.time += nav::navigation_time(rec, cfg_.env);
    ++interval_.count;

    const std::size_t done = episode + 1;
    if (done == cfg_.mi_first_probe || done % cfg_.mi_probe_every == 0) probe_mi(done);
    if (done % cfg_.log_interval == 0) flush_interval(done);
  }

  void refresh_advice() {
    for (GraphEntry& g : graphs_) g.advice = advisor::advise(*advisor_, g.graph);
  }

  void train_advisor() {
    std::vector<advisor::Graph> gs;
    for (const GraphEntry& g : graphs_) gs.push_back(g.graph);
    advisor::BoostTerm boost;
    if (wiring_.boost) {
      std::vector<std::pair<std::size_t, StateSample>> samples;
      for (std::size_t i = 0; i < discs_.size(); ++i)
        if (disc_updates_[i] > 0 && states_[i].size() > cfg_.warmup)
          samples.emplace_back(i, sample_states(states_[i], graphs_, cfg_.sample_size, sample_rng_));
      if (!samples.empty()) {
        boost = [this, samples = std::move(samples)](Tape& tape, std::span<const Var> advice) {
          std::vector<std::size_t> offset(advice.size(), 0);
          for (std::size_t k = 1; k < advice.size(); ++k) offset[k] = offset[k - 1] + advice[k - 1].rows();
          Var all = ad::concat_rows(advice);
          std::vector<Var> terms;
          for (const auto& [i, s] : samples) {
            std::vector<std::size_t> rows;
            for (std::size_t k = 0; k < s.vertices.size(); ++k) rows.push_back(offset[s.slots[k]] + s.vertices[k].vertex);
            Var adv = ad::gather_rows(all, std::move(rows));
            terms.push_back(disc::boost_term(tape, discs_[i], wiring_.kind(), s.states, adv));
          }
          return ad::scale(ad::sum_all(ad::concat_rows(terms)), cfg_.mu);
        };
      }
    }
    const advisor::TrainStats stats = advisor::train_advisor(*advisor_, *advisor_adam_, gs, cfg_.advisor_epochs, boost);
    result_.counts.advisor += stats.loss.size();
    result_.counts.boost += stats.boost_evaluations;
  }

  void probe_mi(std::size_t episode) {
    std::vector<const agent::Transition*> recent;
    for (std::size_t k = replay_.size(); k-- > 0;) recent.push_back(&replay_[k]);
    auto [z, a] = mi_pairs(net_, recent, cfg_.mi_pairs);
    if (z.rows() < 2) return;
    metrics::MineConfig mc;
    mc.steps = cfg_.mi_steps;
    mc.seed = Stream(cfg_.seed, 0x6d69).fork(episode)();
    const double est = metrics::mine_estimate(z, a, mc);
    result_.probes.push_back({episode, est});
    interval_.mi = est;
  }

  void flush_interval(std::size_t episode) {
    if (interval_.count == 0) return;
    const double c = static_cast<double>(interval_.count);
    IntervalRow row;
    row.episode = episode;
    row.reward_mean = interval_.reward / c;
    row.success = interval_.success / c;
    row.norm_time = interval_.time / c;
    row.coloss_agent = interval_.coloss_agent / c;
    if (wiring_.advisor) row.coloss_advice = interval_.coloss_advice / c;
    row.mi_estimate = interval_.mi;
    result_.rows.push_back(row);
    interval_ = {};
  }

  struct Interval {
    double reward = 0, success = 0, time = 0, coloss_agent = 0, coloss_advice = 0;
    std::optional<double> mi;
    std::size_t count = 0;
  };

  TrainConfig cfg_;
  AlgorithmVariant wiring_;
  agent::AgentNet net_;
  ParamRefs agent_params_;
  AdamState agent_adam_;
  agent::ReplayBuffer replay_;
  Stream explore_, replay_rng_, sample_rng_, dropout_rng_, latent_rng_;

  std::unique_ptr<advisor::DualGcnParams> advisor_;
  ParamRefs advisor_params_;
  std::unique_ptr<AdamState> advisor_adam_;
  std::vector<StateBuffer> states_;
  GraphBuffer graphs_;

  std::vector<disc::Discriminator> discs_;
  std::vector<ParamRefs> disc_params_;
  std::vector<AdamState> disc_adam_;
  std::vector<std::size_t> disc_updates_;

  nav::TraceWriter* trace_ = nullptr;
  std::size_t global_step_ = 0;
  Interval interval_;
  RunResult result_;
};

class artifact_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw artifact_error("cannot write " + p.string());
}

inline void write_params(const fs::path& p, std::span<Parameter* const> params) {
  std::ofstream out(p, std::ios::binary);
  std::vector<const Parameter*> cp(params.begin(), params.end());
  checkpoint::write(out, cp);
  if (!out) throw artifact_error("cannot write " + p.string());
}

inline std::string counts_text(const UpdateCounts& c) {
  return "agent = " + std::to_string(c.agent) + "\ndiscriminator = " + std::to_string(c.discriminator) +
         "\nadvisor = " + std::to_string(c.advisor) + "\nboost = " + std::to_string(c.boost) +
         "\nadversarial = " + std::to_string(c.adversarial) + "\ndistillation = " + std::to_string(c.distillation) +
         "\n";
}

}  // namespace detail

/// Trains and writes a run directory:
///   config.txt, metrics.csv, counts.txt, agent.ckpt, [advisor.ckpt], [disc<i>.ckpt],
///   [trace.csv, targets.csv]
/// A failed write leaves an INCOMPLETE marker behind.
inline RunResult train(const TrainConfig& cfg, const std::optional<fs::path>& out_dir = std::nullopt) {
  Trainer trainer(cfg);
  std::optional<std::ofstream> trace_os, targets_os;
  std::optional<nav::TraceWriter> writer;
  if (out_dir) {
    fs::create_directories(*out_dir);
    detail::write_text(*out_dir / "INCOMPLETE", "");
    detail::write_text(*out_dir / "config.txt", cfg.to_text());
    if (cfg.trace) {
      trace_os.emplace(*out_dir / "trace.csv", std::ios::binary);
      targets_os.emplace(*out_dir / "targets.csv", std::ios::binary);
      writer.emplace(*trace_os, *targets_os);
      trainer.set_trace(&*writer);
    }
  }
  RunResult result = trainer.run();
  if (out_dir) {
    if (trace_os && (!trace_os->flush() || !targets_os->flush())) throw artifact_error("cannot write trace");
    detail::write_text(*out_dir / "metrics.csv", metrics_csv(result.rows));
    detail::write_text(*out_dir / "counts.txt", detail::counts_text(result.counts));
    ParamRefs ap = trainer.agent().parameters();
    detail::write_params(*out_dir / "agent.ckpt", ap);
    if (auto* adv = trainer.advisor_params()) {
      ParamRefs p = adv->parameters();
      detail::write_params(*out_dir / "advisor.ckpt", p);
    }
    auto& discs = trainer.discriminators();
    for (std::size_t i = 0; i < discs.size(); ++i) {
      ParamRefs p = discs[i].parameters();
      detail::write_params(*out_dir / ("disc" + std::to_string(i) + ".ckpt"), p);
    }
    fs::remove(*out_dir / "INCOMPLETE");
  }
  return result;
}

/// Reads a run directory's resolved config (no variant-consistency check:
/// a snapshot lists every key).
inline TrainConfig load_run_config(const fs::path& dir) {
  TrainConfig c = TrainConfig::load((dir / "config.txt").string());
  c.explicit_keys.clear();
  c.validate();
  return c;
}

/// Restores the agent of a run directory. `expected_agents` (if given) must
/// match the checkpoint.
inline agent::AgentNet load_agent(const fs::path& dir, std::optional<std::size_t> expected_agents = std::nullopt) {
  const TrainConfig c = load_run_config(dir);
  if (expected_agents && *expected_agents != c.env.n_agents)
    throw std::invalid_argument("checkpoint was trained with " + std::to_string(c.env.n_agents) +
                                " agents, not " + std::to_string(*expected_agents));
  agent::AgentNet net(c.agent_shape(), 0);
  ParamRefs p = net.parameters();
  checkpoint::load_file((dir / "agent.ckpt").string(), p);
  return net;
}

struct EvalSummary {
  std::vector<nav::EpisodeRecord> episodes;
  double success_rate = 0.0;
  double normalized_time = 0.0;
  double reward_mean = 0.0;
};

/// Maps a world state (and each agent's observation) to one action per agent.
using Controller = std::function<std::vector<std::size_t>(const nav::WorldState&,
                                                          const std::vector<std::vector<double>>&)>;

inline EvalSummary evaluate(const Controller& controller, const nav::EnvConfig& env, std::size_t episodes,
                            std::uint64_t seed) {
  if (episodes == 0) throw std::invalid_argument("evaluate: episodes must be > 0");
  EvalSummary out;
  for (std::size_t e = 0; e < episodes; ++e) {
    nav::WorldState s = nav::reset(env, episode_seed(seed, kEvalEnv, e));
    nav::EpisodeRecord rec;
    double reward = 0.0;
    for (std::size_t t = 0; !s.done; ++t) {
      std::vector<std::vector<double>> obs(env.n_agents);
      for (std::size_t i = 0; i < env.n_agents; ++i) obs[i] = nav::observe(s, i, env);
      const std::vector<std::size_t> actions = controller(s, obs);
      auto [next, res] = nav::step(s, actions, env);
      for (double r : res.rewards) reward += r;
      if (res.success && !rec.success) {
        rec.success = true;
        rec.success_step = t + 1;
      }
      rec.steps = t + 1;
      s = std::move(next);
    }
    rec.reward_mean = reward / static_cast<double>(env.n_agents);
    out.episodes.push_back(rec);
  }
  out.success_rate = metrics::success_rate(out.episodes);
  out.normalized_time = metrics::normalized_time(out.episodes, env);
  for (const auto& r : out.episodes) out.reward_mean += r.reward_mean;
  out.reward_mean /= static_cast<double>(episodes);
  return out;
}

/// Greedy (argmax Q) controller for a trained agent.
inline Controller greedy_controller(agent::AgentNet& net) {
  return [&net](const nav::WorldState&, const std::vector<std::vector<double>>& obs) {
    const Matrix q = net.q_values(agent::stack_rows(obs));
    std::vector<std::size_t> a(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) a[i] = argmax(q.row_span(i));
    return a;
  };
}

inline EvalSummary evaluate(agent::AgentNet& net, const nav::EnvConfig& env, std::size_t episodes,
                            std::uint64_t seed) {
  if (net.shape().n_agents != env.n_agents) throw std::invalid_argument("evaluate: agent count mismatch");
  return evaluate(greedy_controller(net), env, episodes, seed);
}

/// Greedy assignment of agents to distinct targets by increasing distance,
/// recomputed every step.
inline std::vector<std::size_t> nearest_distinct_targets(const nav::WorldState& s) {
  const std::size_t n = s.agents.size();
  std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < s.targets.size(); ++k) pairs.emplace_back(nav::norm(s.agents[i] - s.targets[k]), i, k);
  std::sort(pairs.begin(), pairs.end());
  std::vector<std::size_t> action(n, 0);
  std::vector<char> agent_done(n, 0), target_used(s.targets.size(), 0);
  for (auto [d, i, k] : pairs) {
    if (agent_done[i] || target_used[k]) continue;
    action[i] = k;
    agent_done[i] = target_used[k] = 1;
  }
  return action;
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace detail

/// One episode rebuilt from a trace: world states before each step and the
/// actions taken there.
struct TracedEpisode {
  std::size_t episode = 0;
  std::vector<nav::WorldState> states;
  std::vector<std::vector<std::size_t>> actions;
  nav::WorldState final_state;
};

inline std::vector<TracedEpisode> read_trace(const fs::path& trace, const fs::path& targets, std::size_t n) {
  std::map<std::size_t, std::vector<nav::Vec2>> tgt;
  std::map<std::size_t, std::map<std::size_t, std::vector<std::pair<nav::Vec2, std::optional<std::size_t>>>>> rows;
  std::ifstream ti(targets), tr(trace);
  if (!ti || !tr) throw artifact_error("metrics: run has no trace (train with trace = true)");
  std::string line;
  std::getline(ti, line);
  while (std::getline(ti, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv(line);
    tgt[std::stoul(f.at(0))].push_back({std::stod(f.at(2)), std::stod(f.at(3))});
  }
  std::getline(tr, line);
  while (std::getline(tr, line)) {
    if (line.empty()) continue;
    auto f = detail::split_csv(line);
    const std::size_t e = std::stoul(f.at(0)), t = std::stoul(f.at(1));
    std::optional<std::size_t> a;
    if (!f.at(5).empty()) a = std::stoul(f.at(5));
    rows[e][t].push_back({{std::stod(f.at(3)), std::stod(f.at(4))}, a});
  }
  std::vector<TracedEpisode> out;
  for (auto& [e, steps] : rows) {
    TracedEpisode ep;
    ep.episode = e;
    nav::WorldState s;
    s.targets = tgt.at(e);
    for (const auto& [p, a] : steps.at(0)) s.agents.push_back(p);
    if (s.agents.size() != n || s.targets.size() != n) throw artifact_error("metrics: trace agent count mismatch");
    s.previous_agents = s.agents;
    s.last_actions.assign(n, nav::kNoAction);
    for (std::size_t t = 1; steps.contains(t); ++t) {
      ep.states.push_back(s);
      std::vector<std::size_t> act;
      nav::WorldState next = s;
      next.previous_agents = s.agents;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& [p, a] = steps.at(t).at(i);
        next.agents[i] = p;
        act.push_back(a.value());
        next.last_actions[i] = static_cast<int>(*a);
      }
      ep.actions.push_back(std::move(act));
      next.timestep = s.timestep + 1;
      s = std::move(next);
    }
    ep.final_state = std::move(s);
    out.push_back(std::move(ep));
  }
  return out;
}

/// Recomputes per-interval coordination losses and MI probes of a traced run
/// with its final checkpoints. Returns CSV text:
///   episode,coloss_agent,coloss_advice,mi_estimate
inline std::string recompute_metrics(const fs::path& dir) {
  const TrainConfig cfg = load_run_config(dir);
  const std::size_t n = cfg.env.n_agents;
  agent::AgentNet net = load_agent(dir);
  std::optional<advisor::DualGcnParams> adv;
  if (cfg.wiring().advisor) {
    adv.emplace(n, cfg.gcn_layers, 0);
    ParamRefs p = adv->parameters();
    checkpoint::load_file((dir / "advisor.ckpt").string(), p);
  }
  const auto episodes = read_trace(dir / "trace.csv", dir / "targets.csv", n);

  std::string out = "episode,coloss_agent,coloss_advice,mi_estimate\n";
  double ca = 0, cv = 0;
  std::size_t count = 0;
  std::vector<std::vector<double>> next_obs;
  std::vector<std::size_t> other_actions;
  for (std::size_t k = 0; k < episodes.size(); ++k) {
    const TracedEpisode& ep = episodes[k];
    std::vector<std::vector<double>> obs;
    for (const nav::WorldState& s : ep.states)
      for (std::size_t i = 0; i < n; ++i) obs.push_back(nav::observe(s, i, cfg.env));
    const Matrix pi = net.policy_values(agent::stack_rows(obs));
    const advisor::Graph g = advisor::build_graph(pi, n);
    ca += metrics::coordination_loss(g, pi);
    if (adv) cv += metrics::coordination_loss(g, advisor::advise(*adv, g));
    ++count;
    // post-step observations paired with the actions that produced them
    for (std::size_t t = 0; t < ep.actions.size(); ++t) {
      const nav::WorldState& after = t + 1 < ep.states.size() ? ep.states[t + 1] : ep.final_state;
      for (std::size_t i = 0; i < n; ++i) {
        next_obs.push_back(nav::observe(after, i, cfg.env));
        for (std::size_t j = 0; j < n; ++j)
          if (j != i) other_actions.push_back(ep.actions[t][j]);
      }
    }
    const std::size_t done = ep.episode + 1;
    if (done % cfg.log_interval == 0 || k + 1 == episodes.size()) {
      std::string mi;
      if (next_obs.size() >= 2) {
        std::vector<agent::Transition> ts(next_obs.size());
        std::vector<const agent::Transition*> recent;
        const std::size_t m = n - 1;
        for (std::size_t r = next_obs.size(); r-- > 0;) {
          ts[r].next_obs = next_obs[r];
          ts[r].other_actions.assign(other_actions.begin() + r * m, other_actions.begin() + (r + 1) * m);
          recent.push_back(&ts[r]);
        }
        auto [z, a] = mi_pairs(net, recent, cfg.mi_pairs);
        metrics::MineConfig mc;
        mc.steps = cfg.mi_steps;
        mc.seed = Stream(cfg.seed, 0x6d69).fork(done)();
        mi = detail::fmt_double(metrics::mine_estimate(z, a, mc));
      }
      const double c = static_cast<double>(count);
      out += std::to_string(done) + "," + detail::fmt_double(ca / c) + "," + (adv ? detail::fmt_double(cv / c) : "") +
             "," + mi + "\n";
      ca = cv = 0;
      count = 0;
      next_obs.clear();
      other_actions.clear();
    }
  }
  return out;
}

}  // namespace lala::harness
