#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "lala/metrics.hpp"
#include "support/synthetic.hpp"

using namespace lala;
using metrics::coordination_loss;
using metrics::mine_estimate;

namespace {

double neg_log_sigmoid(double x) { return std::log1p(std::exp(-x)); }

}  // namespace

TEST(Coordination, HandAnchors) {
  const advisor::Graph same = advisor::build_graph(Matrix{{1, 0}, {1, 0}}, 2);
  EXPECT_NEAR(coordination_loss(same, same.features), neg_log_sigmoid(-1.0), 1e-12);
  EXPECT_NEAR(coordination_loss(same, same.features), 1.31326, 1e-5);

  const advisor::Graph orth = advisor::build_graph(Matrix{{1, 0}, {0, 1}}, 2);
  EXPECT_NEAR(coordination_loss(orth, orth.features), std::log(2.0), 1e-12);

  const advisor::Graph lone = advisor::build_graph(Matrix{{1, 0}, {1, 0}}, 1);
  EXPECT_NEAR(coordination_loss(lone, lone.features), neg_log_sigmoid(1.0), 1e-12);
  EXPECT_NEAR(coordination_loss(lone, lone.features), 0.31326, 1e-5);
}

TEST(Coordination, SingleVertexIsZeroAndShapeChecked) {
  const advisor::Graph g = advisor::build_graph(Matrix{{0.5, 0.5}}, 1);
  EXPECT_EQ(coordination_loss(g, g.features), 0.0);
  EXPECT_THROW(coordination_loss(g, Matrix(2, 2)), dimension_error);
}

TEST(Coordination, StrictlyPositiveOnRandomGraphs) {
  Stream rng(1);
  for (int k = 0; k < 100; ++k) {
    const std::size_t n = 2 + rng.index(3), steps = 1 + rng.index(5);
    const advisor::Graph g = lala::testing::conflicting_graph(n, steps, rng);
    EXPECT_GT(coordination_loss(g, g.features), 0.0);
  }
}

TEST(Coordination, SeparatingAConflictPairLowersTheLoss) {
  Stream rng(2);
  for (int k = 0; k < 200; ++k) {
    const std::size_t n = 2 + rng.index(4), steps = 1 + rng.index(5);
    const std::size_t t = rng.index(steps);
    Matrix d(n * steps, n);
    for (std::size_t r = 0; r < d.rows(); ++r) d(r, rng.index(n)) = 1.0;
    auto set_row = [&](Matrix& m, std::size_t row, std::size_t target) {
      std::fill(m.row_span(row).begin(), m.row_span(row).end(), 0.0);
      m(row, target) = 1.0;
    };
    // agents 0 and 1 collide on target 0 at step t; agent 1 heads elsewhere around it
    set_row(d, t * n, 0);
    set_row(d, t * n + 1, 0);
    for (std::size_t s : {t - 1, t + 1})
      if (s < steps) set_row(d, s * n + 1, 1 + rng.index(n - 1));
    std::vector<char> used(n, 0);
    for (std::size_t i = 0; i < n; ++i) used[argmax(d.row_span(t * n + i))] = 1;
    const std::size_t free_target = std::find(used.begin(), used.end(), 0) - used.begin();
    ASSERT_LT(free_target, n);

    const advisor::Graph g = advisor::build_graph(d, n);
    Matrix edited = d;
    set_row(edited, t * n + 1, free_target);
    EXPECT_LT(coordination_loss(g, edited), coordination_loss(g, d)) << "n " << n << " steps " << steps;
  }
}

TEST(Rates, SuccessAndTime) {
  nav::EnvConfig cfg;
  std::vector<nav::EpisodeRecord> all_ok(4, {true, 15, 15, 0.0});
  EXPECT_EQ(metrics::success_rate(all_ok), 1.0);
  EXPECT_DOUBLE_EQ(metrics::normalized_time(all_ok, cfg), 0.5);
  std::vector<nav::EpisodeRecord> all_fail(3, {false, 0, 30, 0.0});
  EXPECT_EQ(metrics::success_rate(all_fail), 0.0);
  EXPECT_EQ(metrics::normalized_time(all_fail, cfg), 1.0);
  std::vector<nav::EpisodeRecord> half{{true, 6, 6, 0.0}, {false, 0, 30, 0.0}};
  EXPECT_EQ(metrics::success_rate(half), 0.5);
  EXPECT_DOUBLE_EQ(metrics::normalized_time(half, cfg), 0.6);
  EXPECT_THROW(metrics::success_rate({}), std::invalid_argument);
  EXPECT_THROW(metrics::normalized_time({}, cfg), std::invalid_argument);
}

TEST(Mine, InputValidation) {
  EXPECT_THROW(mine_estimate(Matrix(3, 1), Matrix(2, 1)), dimension_error);
  EXPECT_THROW(mine_estimate(Matrix(1, 1), Matrix(1, 1)), std::invalid_argument);
}

TEST(Mine, ConstantInputsGiveZero) {
  metrics::MineConfig cfg;
  cfg.steps = 300;
  EXPECT_NEAR(mine_estimate(Matrix(1000, 2, 1.0), Matrix(1000, 1, 0.5), cfg), 0.0, 1e-9);
}

TEST(Mine, IndependentSamplesNearZero) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Stream rng(seed, 1);
    const auto p = lala::testing::correlated_gaussians(2000, 0.0, rng);
    metrics::MineConfig cfg;
    cfg.seed = seed;
    const double mi = mine_estimate(p.z, p.a, cfg);
    EXPECT_GE(mi, 0.0);
    EXPECT_LT(mi, 0.05) << "seed " << seed;
  }
}

TEST(Mine, DeterministicMapOfFourActions) {
  Stream rng(7);
  std::vector<std::size_t> labels(2000);
  for (auto& l : labels) l = rng.index(4);
  const Matrix a = metrics::one_hot(labels, 4);
  metrics::MineConfig cfg;
  cfg.seed = 7;
  EXPECT_NEAR(mine_estimate(a, a, cfg), std::log(4.0), 0.15 * std::log(4.0));
}

TEST(Mine, MonotoneInCorrelation) {
  metrics::MineConfig cfg;
  cfg.seed = 3;
  double last = -1.0;
  for (double rho : {0.3, 0.6, 0.9}) {
    Stream rng(11);
    const auto p = lala::testing::correlated_gaussians(3000, rho, rng);
    const double mi = mine_estimate(p.z, p.a, cfg);
    EXPECT_GT(mi, last) << "rho " << rho;
    last = mi;
  }
}
