#pragma once

// The five algorithm wirings. All share the environment, agent network,
// seeds and schedules; they differ only in which advice components exist.

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

#include "lala/agent.hpp"
#include "lala/discriminator.hpp"
#include "lala/tape.hpp"

namespace lala {

enum class VariantTag { lala, lala_nb, lala_sa, kda, no_advice };
enum class DiscKind { none, set, pair };

struct AlgorithmVariant {
  VariantTag tag = VariantTag::lala;
  bool advisor = true;
  DiscKind discriminator = DiscKind::set;
  bool boost = true;
  bool kda = false;

  bool has_discriminator() const { return discriminator != DiscKind::none; }
  disc::Kind kind() const { return discriminator == DiscKind::pair ? disc::Kind::pair : disc::Kind::set; }
  bool operator==(const AlgorithmVariant&) const = default;

  /// Validates a flag combination; only the five published wirings are accepted.
  static AlgorithmVariant from_flags(bool advisor, DiscKind d, bool boost, bool kda);
  static AlgorithmVariant make(VariantTag tag);
};

inline constexpr std::array<AlgorithmVariant, 5> kWirings{{
    {VariantTag::lala, true, DiscKind::set, true, false},
    {VariantTag::lala_nb, true, DiscKind::set, false, false},
    {VariantTag::lala_sa, true, DiscKind::pair, true, false},
    {VariantTag::kda, true, DiscKind::none, false, true},
    {VariantTag::no_advice, false, DiscKind::none, false, false},
}};

inline AlgorithmVariant AlgorithmVariant::from_flags(bool advisor, DiscKind d, bool boost, bool kda) {
  for (const AlgorithmVariant& w : kWirings)
    if (w.advisor == advisor && w.discriminator == d && w.boost == boost && w.kda == kda) return w;
  throw std::invalid_argument("unsupported component wiring");
}

inline AlgorithmVariant AlgorithmVariant::make(VariantTag tag) {
  for (const AlgorithmVariant& w : kWirings)
    if (w.tag == tag) return w;
  throw std::invalid_argument("unknown variant");
}

inline AlgorithmVariant lala_wiring() { return AlgorithmVariant::make(VariantTag::lala); }
inline AlgorithmVariant lala_nb_wiring() { return AlgorithmVariant::make(VariantTag::lala_nb); }
inline AlgorithmVariant lala_sa_wiring() { return AlgorithmVariant::make(VariantTag::lala_sa); }
inline AlgorithmVariant kda_wiring() { return AlgorithmVariant::make(VariantTag::kda); }
inline AlgorithmVariant no_advice_wiring() { return AlgorithmVariant::make(VariantTag::no_advice); }

inline std::string_view to_string(VariantTag t) {
  switch (t) {
    case VariantTag::lala: return "lala";
    case VariantTag::lala_nb: return "lala-nb";
    case VariantTag::lala_sa: return "lala-sa";
    case VariantTag::kda: return "kda";
    case VariantTag::no_advice: return "no-advice";
  }
  return "?";
}

inline VariantTag parse_variant(std::string_view s) {
  for (const AlgorithmVariant& w : kWirings)
    if (to_string(w.tag) == s) return w.tag;
  throw std::invalid_argument("unknown variant '" + std::string(s) + "'");
}

namespace baselines {

using ad::Tape;
using ad::Var;

/// Agent objective without any advice term.
inline agent::LossParts no_advice_loss(Tape& tape, agent::AgentNet& net, const agent::Batch& batch,
                                       const agent::AgentLossConfig& cfg, Stream* noise) {
  return agent::agent_loss(tape, net, batch, cfg, noise, std::nullopt);
}

/// mean over states of JSD(agent policy || advice); advice is a constant.
inline Var kda_term(Tape& tape, Var agent_policy, const Matrix& advice) {
  if (!agent_policy.value().same_shape(advice))
    throw dimension_error("kda_term: advice not aligned with agent distributions");
  return ad::mean_all(ad::jsd_rows(agent_policy, tape.constant(advice)));
}

/// No-Advice loss + lambda * JSD(agent policy on `states` || advice).
inline agent::LossParts kda_loss(Tape& tape, agent::AgentNet& net, const agent::Batch& batch,
                                 const Matrix& states, const Matrix& advice, const agent::AgentLossConfig& cfg,
                                 Stream* noise) {
  if (states.rows() != advice.rows()) throw dimension_error("kda_loss: misaligned advice");
  Var term = kda_term(tape, net.policy(tape, states), advice);
  return agent::agent_loss(tape, net, batch, cfg, noise, term);
}

}  // namespace baselines
}  // namespace lala
