#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "lala/discriminator.hpp"
#include "support/disc_tasks.hpp"
#include "support/gradcheck.hpp"

using namespace lala;
using namespace lala::disc;
using ad::Tape;
using ad::Var;

namespace {

DiscShape small(std::size_t n = 3) {
  DiscShape s;
  s.n_agents = n;
  s.model_width = 16;
  s.heads = 2;
  s.layers = 2;
  s.ff_width = 32;
  return s;
}

void zero_classifier(Discriminator& d) {
  ParamRefs c = d.classifier_parameters();
  fill_params(c, 0.0);
}

Parameter* find(ParamRefs& ps, const std::string& name) {
  for (Parameter* p : ps)
    if (p->name == name) return p;
  return nullptr;
}

}  // namespace

TEST(Shape, DefaultsAndValidation) {
  DiscShape s;
  EXPECT_EQ(s.model_width, 64u);
  EXPECT_EQ(s.heads, 4u);
  EXPECT_EQ(s.layers, 3u);
  EXPECT_EQ(s.ff_width, 256u);
  EXPECT_EQ(s.dropout, 0.1);
  Discriminator d(s, "d", 1);
  ParamRefs ps = d.parameters();
  EXPECT_EQ(find(ps, "d.input.weight")->value.rows(), s.token_dim());
  EXPECT_EQ(find(ps, "d.input.weight")->value.cols(), 64u);
  EXPECT_EQ(find(ps, "d.cls")->value.cols(), 64u);
  s.heads = 5;
  EXPECT_THROW(Discriminator(s, "d", 1), std::invalid_argument);
}

TEST(Judge, SetPermutationInvarianceInEvalMode) {
  Stream rng(1);
  Discriminator d(small(), "d", 1);
  const Matrix s = lala::testing::random_states(6, 3, rng);
  const Matrix a = lala::testing::tempered_rows(6, 3, 1.0, rng);
  const std::vector<std::size_t> perm{3, 5, 0, 1, 4, 2};
  Matrix ps(6, s.cols()), pa(6, 3);
  for (std::size_t r = 0; r < 6; ++r) {
    std::copy(s.row_span(perm[r]).begin(), s.row_span(perm[r]).end(), ps.row_span(r).begin());
    std::copy(a.row_span(perm[r]).begin(), a.row_span(perm[r]).end(), pa.row_span(r).begin());
  }
  EXPECT_NEAR(d.judge_value(s, a), d.judge_value(ps, pa), 1e-14);
}

TEST(Judge, ZeroClassifierGivesHalfAndOutputIsClamped) {
  Stream rng(2);
  Discriminator d(small(), "d", 2);
  zero_classifier(d);
  const Matrix s = lala::testing::random_states(4, 3, rng);
  const Matrix a = lala::testing::tempered_rows(4, 3, 1.0, rng);
  EXPECT_DOUBLE_EQ(d.judge_value(s, a), 0.5);
  EXPECT_DOUBLE_EQ(d.judge_pair_value(s.row_span(0), a.row_span(0)), 0.5);

  Discriminator e(small(), "e", 3);
  ParamRefs c = e.classifier_parameters();
  fill_params(c, 1e4);
  const double p = e.judge_value(s, a);
  EXPECT_GE(p, ad::kProbFloor);
  EXPECT_LE(p, ad::kProbCeil);
}

TEST(Judge, EmptySetAndShapeErrors) {
  Discriminator d(small(), "d", 4);
  EXPECT_THROW(d.judge_value(Matrix(0, nav::observation_size(3)), Matrix(0, 3)), std::invalid_argument);
  EXPECT_THROW(d.judge_value(Matrix(2, 5), Matrix(2, 3)), dimension_error);
}

TEST(Judge, PairModeJudgesEachPairAlone) {
  Stream rng(5);
  Discriminator d(small(), "d", 5);
  const Matrix s = lala::testing::random_states(5, 3, rng);
  const Matrix a = lala::testing::tempered_rows(5, 3, 1.0, rng);
  Tape t;
  const Matrix p = d.judge_pairs(t, s, t.constant(a), Grad::off, Mode::eval()).value();
  ASSERT_EQ(p.rows(), 5u);
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_NEAR(p[r], d.judge_pair_value(s.row_span(r), a.row_span(r)), 1e-12);
    EXPECT_NEAR(p[r], d.judge_value(Matrix::row(s.row_span(r)), Matrix::row(a.row_span(r))), 1e-12);
    EXPECT_GT(p[r], 0.0);
    EXPECT_LT(p[r], 1.0);
  }
}

TEST(Loss, AnalyticAnchors) {
  Tape t;
  auto loss = [&](double adv, double agt) {
    return ad::neg(ad::add(mean_log(t.constant({{adv}})), mean_log1m(t.constant({{agt}})))).item();
  };
  EXPECT_NEAR(loss(0.5, 0.5), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(loss(0.9, 0.1), -(std::log(0.9) + std::log(0.9)), 1e-12);
  EXPECT_NEAR(loss(0.9, 0.1), 0.21072, 1e-5);
  EXPECT_NEAR(loss(1.0, 0.0), -2 * std::log(1 - 1e-7), 1e-12);
  EXPECT_NEAR(mean_log1m(t.constant({{0.5}})).item(), std::log(0.5), 1e-15);
  EXPECT_NEAR(mean_log1m(t.constant({{0.0}})).item(), std::log(1 - 1e-7), 1e-15);
  EXPECT_NEAR(ad::neg(mean_log(t.constant({{0.5}}))).item(), std::log(2.0), 1e-15);
}

TEST(Loss, ZeroClassifierGivesTwoLnTwo) {
  Stream rng(6);
  Discriminator d(small(), "d", 6);
  zero_classifier(d);
  const Matrix s = lala::testing::random_states(8, 3, rng);
  for (Kind k : {Kind::set, Kind::pair}) {
    Tape t;
    Var l = disc_loss(t, d, k, s, lala::testing::tempered_rows(8, 3, 0.1, rng), lala::testing::tempered_rows(8, 3, 10, rng),
                      Mode::eval());
    EXPECT_NEAR(l.item(), 2 * std::log(2.0), 1e-9);
  }
}

TEST(Loss, SingletonPairLossEqualsSetLoss) {
  Stream rng(7);
  Discriminator d(small(), "d", 7);
  const Matrix s = lala::testing::random_states(1, 3, rng);
  const Matrix a = lala::testing::tempered_rows(1, 3, 1.0, rng), b = lala::testing::tempered_rows(1, 3, 1.0, rng);
  Tape t;
  const double set = disc_loss(t, d, Kind::set, s, a, b, Mode::eval()).item();
  const double pair = disc_loss(t, d, Kind::pair, s, a, b, Mode::eval()).item();
  EXPECT_NEAR(set, pair, 1e-12);
}

TEST(Gradients, AdversarialTermAgainstFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Stream rng(seed);
    Discriminator d(small(), "d", seed);
    const Matrix s = lala::testing::random_states(3, 3, rng);
    for (Kind k : {Kind::set, Kind::pair}) {
      const double err = lala::testing::check_inputs(
          [&](Tape& t, std::span<const Var> v) { return adversarial_term(t, d, k, s, ad::softmax_rows(v[0])); },
          {lala::testing::normal_matrix(3, 3, rng)});
      EXPECT_LT(err, 1e-4) << "seed " << seed;
    }
  }
}

TEST(Gradients, DiscriminatorParametersAgainstFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Stream rng(seed + 100);
    DiscShape sh = small();
    sh.layers = 1;
    Discriminator d(sh, "d", seed);
    const Matrix s = lala::testing::random_states(3, 3, rng);
    const Matrix a = lala::testing::tempered_rows(3, 3, 0.5, rng), b = lala::testing::tempered_rows(3, 3, 2.0, rng);
    ParamRefs ps = d.parameters();
    for (Kind k : {Kind::set, Kind::pair}) {
      const double err = lala::testing::check_params(ps, [&](Tape& t) { return disc_loss(t, d, k, s, a, b, Mode::eval()); });
      EXPECT_LT(err, 1e-4) << "seed " << seed;
    }
  }
}

TEST(Gradients, EachOperationTouchesOnlyItsParameters) {
  Stream rng(8);
  Discriminator d(small(), "d", 8);
  ParamRefs dp = d.parameters();
  const Matrix s = lala::testing::random_states(4, 3, rng);

  zero_grad(dp);
  {
    Tape t;
    Var agent = t.variable(lala::testing::tempered_rows(4, 3, 1.0, rng));
    Var term = adversarial_term(t, d, Kind::set, s, agent);
    t.backward(term);
    EXPECT_FALSE(agent.grad().empty());
  }
  for (Parameter* p : dp)
    for (double g : p->grad.values()) EXPECT_EQ(g, 0.0) << p->name;

  {
    Tape t;
    Var adv = t.variable(lala::testing::tempered_rows(4, 3, 1.0, rng));
    t.backward(boost_term(t, d, Kind::set, s, adv));
    EXPECT_FALSE(adv.grad().empty());
  }
  for (Parameter* p : dp)
    for (double g : p->grad.values()) EXPECT_EQ(g, 0.0) << p->name;

  {
    Tape t;
    t.backward(disc_loss(t, d, Kind::set, s, lala::testing::tempered_rows(4, 3, 1.0, rng),
                         lala::testing::tempered_rows(4, 3, 1.0, rng), Mode::eval()));
  }
  double total = 0;
  for (Parameter* p : dp)
    for (double g : p->grad.values()) total += std::abs(g);
  EXPECT_GT(total, 0.0);
}

TEST(Training, SeparableSetsAreLearned) {
  Stream rng(9);
  DiscShape sh;
  Discriminator d(sh, "d", 9);
  lala::testing::train_disc(d, Kind::set, lala::testing::kSeparable, 300, 32, 1e-3, rng);
  EXPECT_GT(lala::testing::held_out_accuracy(d, Kind::set, lala::testing::kSeparable, 50, 32, rng), 0.9);
}

TEST(Training, IdenticalDistributionsConvergeToJsOptimum) {
  Stream rng(10);
  Discriminator d(small(), "d", 10);
  const auto losses = lala::testing::train_disc(d, Kind::set, {1.0, 1.0}, 300, 32, 1e-3, rng);
  const double tail = std::accumulate(losses.end() - 50, losses.end(), 0.0) / 50.0;
  EXPECT_NEAR(tail, 2 * std::log(2.0), 0.1);
}

TEST(Debug, JudgementDump) {
  std::ostringstream os;
  const std::vector<Matrix> s{Matrix{{1.0, 2.0}}}, a{Matrix{{0.25, 0.75}}};
  const std::vector<double> p{0.5};
  dump_judgements(os, s, a, p);
  EXPECT_EQ(os.str(), "set,probability,pairs\n0,0.5,\"1 2|0.25 0.75\"\n");
}
