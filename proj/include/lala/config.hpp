#pragma once

// Training configuration: a flat key = value file, one setting per line,
// '#' starts a comment. Every key has a default; unknown keys are errors.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lala/agent.hpp"
#include "lala/env.hpp"
#include "lala/variants.hpp"

namespace lala::harness {

class config_error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  VariantTag variant = VariantTag::lala;
  std::uint64_t seed = 1;
  std::size_t episodes = 20000;
  std::size_t eval_episodes = 1000;

  nav::EnvConfig env;
  agent::AgentLossConfig loss;
  agent::EpsilonSchedule epsilon;
  std::size_t encoder_hidden = 32;
  std::size_t latent = 16;
  std::size_t q_hidden1 = 300;
  std::size_t q_hidden2 = 200;

  std::size_t sample_size = 32;  // M
  std::size_t warmup = 64;       // states per agent before the discriminator trains
  double mu = 0.3;               // advisor boost weight
  std::size_t advisor_epochs = 5;
  std::size_t gcn_layers = 2;
  double lr_agent = 0.01;
  double lr_advisor = 0.1;
  double lr_disc = 1e-3;

  std::size_t disc_width = 64;
  std::size_t disc_heads = 4;
  std::size_t disc_layers = 3;
  std::size_t disc_ff = 256;
  double disc_dropout = 0.1;

  std::size_t replay_size = 1500;
  std::size_t batch_size = 32;
  std::size_t graph_buffer = 10;
  std::size_t state_buffer = 5000;
  std::size_t update_every = 1;

  std::size_t log_interval = 100;
  std::size_t mi_first_probe = 200;
  std::size_t mi_probe_every = 500;
  std::size_t mi_pairs = 2000;
  std::size_t mi_steps = 1500;
  bool trace = false;

  /// Keys set explicitly by a parsed file (drives the variant-consistency check).
  std::set<std::string> explicit_keys;

  AlgorithmVariant wiring() const { return AlgorithmVariant::make(variant); }

  agent::AgentShape agent_shape() const {
    return {env.n_agents, env.side_length, encoder_hidden, latent, q_hidden1, q_hidden2};
  }

  void validate() const;
  std::string to_text() const;
  std::uint64_t fingerprint() const;       // excludes the variant tag
  std::uint64_t full_fingerprint() const;  // includes it

  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::string& path);
};

namespace detail {

enum class Group { common, advisor, discriminator, boost };

struct Field {
  const char* name;
  Group group;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw config_error("config: bad value '" + std::string(v) + "' for " + std::string(key));
  return out;
}

inline bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw config_error("config: bad boolean '" + std::string(v) + "' for " + std::string(key));
}

template <class T>
Field num(const char* name, Group g, T TrainConfig::*m) {
  return {name, g,
          [m](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*m);
            else return std::to_string(c.*m);
          },
          [m, name](TrainConfig& c, std::string_view v) { c.*m = parse_number<T>(name, v); }};
}

template <class S, class T>
Field nested(const char* name, Group g, S TrainConfig::*outer, T S::*inner) {
  return {name, g,
          [outer, inner](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt_double(c.*outer.*inner);
            else return std::to_string(c.*outer.*inner);
          },
          [outer, inner, name](TrainConfig& c, std::string_view v) {
            c.*outer.*inner = parse_number<T>(name, v);
          }};
}

inline const std::vector<Field>& fields() {
  using G = Group;
  using C = TrainConfig;
  static const std::vector<Field> f = [] {
    std::vector<Field> v{
        {"variant", G::common, [](const C& c) { return std::string(to_string(c.variant)); },
         [](C& c, std::string_view s) {
           try {
             c.variant = parse_variant(s);
           } catch (const std::invalid_argument& e) {
             throw config_error(e.what());
           }
         }},
        num("seed", G::common, &C::seed),
        num("episodes", G::common, &C::episodes),
        num("eval_episodes", G::common, &C::eval_episodes),
        nested("agents", G::common, &C::env, &nav::EnvConfig::n_agents),
        nested("side_length", G::common, &C::env, &nav::EnvConfig::side_length),
        nested("step_distance", G::common, &C::env, &nav::EnvConfig::step_distance),
        nested("max_steps", G::common, &C::env, &nav::EnvConfig::max_steps),
        nested("reach_radius", G::common, &C::env, &nav::EnvConfig::reach_radius),
        nested("gamma", G::common, &C::loss, &agent::AgentLossConfig::gamma),
        nested("rho1", G::common, &C::loss, &agent::AgentLossConfig::rho1),
        nested("rho2", G::common, &C::loss, &agent::AgentLossConfig::rho2),
        nested("rho3", G::common, &C::loss, &agent::AgentLossConfig::rho3),
        nested("lambda", G::advisor, &C::loss, &agent::AgentLossConfig::lambda),
        nested("epsilon_start", G::common, &C::epsilon, &agent::EpsilonSchedule::start),
        nested("epsilon_end", G::common, &C::epsilon, &agent::EpsilonSchedule::end),
        nested("epsilon_fraction", G::common, &C::epsilon, &agent::EpsilonSchedule::fraction),
        num("encoder_hidden", G::common, &C::encoder_hidden),
        num("latent", G::common, &C::latent),
        num("q_hidden1", G::common, &C::q_hidden1),
        num("q_hidden2", G::common, &C::q_hidden2),
        num("sample_size", G::advisor, &C::sample_size),
        num("warmup", G::advisor, &C::warmup),
        num("mu", G::boost, &C::mu),
        num("advisor_epochs", G::advisor, &C::advisor_epochs),
        num("gcn_layers", G::advisor, &C::gcn_layers),
        num("lr_agent", G::common, &C::lr_agent),
        num("lr_advisor", G::advisor, &C::lr_advisor),
        num("lr_disc", G::discriminator, &C::lr_disc),
        num("disc_width", G::discriminator, &C::disc_width),
        num("disc_heads", G::discriminator, &C::disc_heads),
        num("disc_layers", G::discriminator, &C::disc_layers),
        num("disc_ff", G::discriminator, &C::disc_ff),
        num("disc_dropout", G::discriminator, &C::disc_dropout),
        num("replay_size", G::common, &C::replay_size),
        num("batch_size", G::common, &C::batch_size),
        num("graph_buffer", G::advisor, &C::graph_buffer),
        num("state_buffer", G::advisor, &C::state_buffer),
        num("update_every", G::common, &C::update_every),
        num("log_interval", G::common, &C::log_interval),
        num("mi_first_probe", G::common, &C::mi_first_probe),
        num("mi_probe_every", G::common, &C::mi_probe_every),
        num("mi_pairs", G::common, &C::mi_pairs),
        num("mi_steps", G::common, &C::mi_steps),
        {"trace", G::common, [](const C& c) { return std::string(c.trace ? "true" : "false"); },
         [](C& c, std::string_view s) { c.trace = parse_bool("trace", s); }},
    };
    std::sort(v.begin(), v.end(), [](const Field& a, const Field& b) { return std::string_view(a.name) < b.name; });
    return v;
  }();
  return f;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string canonical(const TrainConfig& c, bool with_variant) {
  std::string out;
  for (const Field& f : fields()) {
    if (!with_variant && std::string_view(f.name) == "variant") continue;
    out += f.name;
    out += " = ";
    out += f.get(c);
    out += '\n';
  }
  return out;
}

inline std::string hex(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace detail

inline void TrainConfig::validate() const {
  try {
    env.validate();
    loss.validate();
  } catch (const std::invalid_argument& e) {
    throw config_error(e.what());
  }
  const std::pair<const char*, std::size_t> counts[] = {
      {"episodes", episodes},         {"eval_episodes", eval_episodes}, {"encoder_hidden", encoder_hidden},
      {"latent", latent},             {"q_hidden1", q_hidden1},         {"q_hidden2", q_hidden2},
      {"sample_size", sample_size},   {"advisor_epochs", advisor_epochs}, {"gcn_layers", gcn_layers},
      {"disc_width", disc_width},     {"disc_heads", disc_heads},       {"disc_layers", disc_layers},
      {"disc_ff", disc_ff},           {"replay_size", replay_size},     {"batch_size", batch_size},
      {"graph_buffer", graph_buffer}, {"state_buffer", state_buffer},   {"update_every", update_every},
      {"log_interval", log_interval}, {"mi_probe_every", mi_probe_every}, {"mi_pairs", mi_pairs},
      {"mi_steps", mi_steps},
  };
  for (auto [name, v] : counts)
    if (v == 0) throw config_error(std::string("config: ") + name + " must be positive");
  if (gcn_layers > 3) throw config_error("config: gcn_layers must be 1..3");
  if (disc_width % disc_heads != 0) throw config_error("config: disc_width must be divisible by disc_heads");
  if (!(disc_dropout >= 0.0 && disc_dropout < 1.0)) throw config_error("config: disc_dropout must be in [0,1)");
  if (!(lr_agent > 0 && lr_advisor > 0 && lr_disc > 0)) throw config_error("config: learning rates must be > 0");
  if (mu < 0) throw config_error("config: mu must be non-negative");
  if (!(epsilon.start >= 0 && epsilon.start <= 1 && epsilon.end >= 0 && epsilon.end <= 1 && epsilon.fraction >= 0))
    throw config_error("config: epsilon schedule out of range");

  const AlgorithmVariant w = wiring();
  for (const detail::Field& f : detail::fields()) {
    if (!explicit_keys.contains(f.name)) continue;
    const bool allowed = f.group == detail::Group::common ||
                         (f.group == detail::Group::advisor && w.advisor) ||
                         (f.group == detail::Group::discriminator && w.has_discriminator()) ||
                         (f.group == detail::Group::boost && w.boost);
    if (!allowed)
      throw config_error(std::string("config: '") + f.name + "' has no meaning for variant " +
                         std::string(to_string(variant)));
  }
}

inline std::string TrainConfig::to_text() const {
  return "# resolved configuration\n# fingerprint " + detail::hex(fingerprint()) + "\n" +
         detail::canonical(*this, true);
}

inline std::uint64_t TrainConfig::fingerprint() const { return detail::fnv1a(detail::canonical(*this, false)); }
inline std::uint64_t TrainConfig::full_fingerprint() const { return detail::fnv1a(detail::canonical(*this, true)); }

inline TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig c;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    const auto& fs = detail::fields();
    auto it = std::find_if(fs.begin(), fs.end(), [&](const detail::Field& f) { return key == f.name; });
    if (it == fs.end()) throw config_error("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!c.explicit_keys.insert(key).second)
      throw config_error("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    it->set(c, value);
  }
  return c;
}

inline TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace lala::harness
