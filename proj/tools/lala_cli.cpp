#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "lala/lala.hpp"

namespace fs = std::filesystem;
using namespace lala;

int main(int argc, char** argv) {
  CLI::App app{"Cooperative navigation trainer with graph-based advice"};
  app.require_subcommand(1);

  std::string config_path, variant, out_dir;
  std::optional<std::size_t> agents, episodes;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "train one run and write its artifacts");
  train->add_option("--config", config_path, "key = value configuration file");
  train->add_option("--variant", variant, "lala | lala-nb | lala-sa | kda | no-advice");
  train->add_option("--agents", agents, "number of agents");
  train->add_option("--episodes", episodes, "training episodes");
  train->add_option("--seed", seed, "run seed");
  train->add_option("--out", out_dir, "run directory")->required();

  std::string checkpoint_dir;
  std::size_t eval_episodes = 1000;
  std::uint64_t eval_seed = 0;
  std::optional<std::size_t> eval_agents;
  auto* eval = app.add_subcommand("eval", "greedy evaluation of a trained run");
  eval->add_option("--checkpoint", checkpoint_dir, "run directory")->required();
  eval->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval->add_option("--seed", eval_seed, "evaluation seed");
  eval->add_option("--agents", eval_agents, "expected number of agents");

  std::string run_dir;
  auto* metrics_cmd = app.add_subcommand("metrics", "recompute coordination loss and MI curves from a traced run");
  metrics_cmd->add_option("--run", run_dir, "run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      harness::TrainConfig cfg = config_path.empty() ? harness::TrainConfig{} : harness::TrainConfig::load(config_path);
      if (!variant.empty()) cfg.variant = parse_variant(variant);
      if (agents) cfg.env.n_agents = *agents;
      if (episodes) cfg.episodes = *episodes;
      if (seed) cfg.seed = *seed;
      cfg.validate();
      const harness::RunResult r = harness::train(cfg, fs::path(out_dir));
      const double sr = metrics::success_rate(r.episodes);
      const double nt = metrics::normalized_time(r.episodes, cfg.env);
      std::printf("trained %zu episodes: success %.4f, normalized time %.4f -> %s\n", r.episodes.size(), sr, nt,
                  out_dir.c_str());
    } else if (*eval) {
      const harness::TrainConfig cfg = harness::load_run_config(checkpoint_dir);
      agent::AgentNet net = harness::load_agent(checkpoint_dir, eval_agents);
      const harness::EvalSummary s = harness::evaluate(net, cfg.env, eval_episodes, eval_seed);
      std::printf("episodes %zu\nsuccess_rate %.6f\nnormalized_time %.6f\nreward_mean %.6f\n", s.episodes.size(),
                  s.success_rate, s.normalized_time, s.reward_mean);
    } else if (*metrics_cmd) {
      const std::string csv = harness::recompute_metrics(run_dir);
      const fs::path out = fs::path(run_dir) / "metrics_recomputed.csv";
      std::ofstream(out, std::ios::binary) << csv;
      std::cout << csv;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
