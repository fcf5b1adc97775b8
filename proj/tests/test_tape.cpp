#include <gtest/gtest.h>

#include <cmath>

#include "lala/nn.hpp"
#include "lala/tape.hpp"
#include "support/gradcheck.hpp"

using namespace lala;
using ad::Tape;
using ad::Var;

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  Tape t;
  Matrix m{{1.5, -2.0}, {0.25, 4.0}};
  EXPECT_EQ(ad::matmul(t.constant({{1, 0}, {0, 1}}), t.constant(m)).value(), m);
}

TEST(Matmul, HandExample) {
  Tape t;
  Var y = ad::matmul(t.constant({{1, 2}, {3, 4}}), t.constant({{1}, {1}}));
  EXPECT_EQ(y.value(), (Matrix{{3}, {7}}));
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  Tape t;
  Matrix b{{1, -2, 0.5}, {3, 4, -1}};
  Var a = t.variable({{0.1, 0.2}, {0.3, 0.4}, {0.5, 0.6}});
  t.backward(ad::sum_all(ad::matmul(a, t.constant(b))));
  Matrix expect = matmul(Matrix(3, 3, 1.0), transpose(b));
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_NEAR(a.grad()[i], expect[i], 1e-12);
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::matmul(t.constant(Matrix(2, 3)), t.constant(Matrix(2, 3))), dimension_error);
}

TEST(Elementwise, ScalarAnchors) {
  Tape t;
  EXPECT_DOUBLE_EQ(ad::sigmoid(t.constant({{0.0}})).item(), 0.5);
  EXPECT_DOUBLE_EQ(ad::relu(t.constant({{-3.0}})).item(), 0.0);
  EXPECT_NEAR(ad::sigmoid(t.constant({{1.0}})).item(), 0.7310585786, 1e-10);
}

TEST(Elementwise, ReluSubgradientAtZeroIsZero) {
  Tape t;
  Var x = t.variable({{0.0, 1.0}});
  t.backward(ad::sum_all(ad::relu(x)));
  EXPECT_EQ(x.grad()(0, 0), 0.0);
  EXPECT_EQ(x.grad()(0, 1), 1.0);
}

TEST(Elementwise, LogOfNonPositiveIsDomainError) {
  Tape t;
  EXPECT_THROW(ad::log(t.constant({{0.0}})), std::domain_error);
  EXPECT_THROW(ad::log(t.constant({{-1.0}})), std::domain_error);
}

TEST(Elementwise, BroadcastOnlyForRowVectors) {
  Tape t;
  EXPECT_NO_THROW(ad::add(t.constant(Matrix(3, 2)), t.constant(Matrix(1, 2))));
  EXPECT_THROW(ad::add(t.constant(Matrix(3, 2)), t.constant(Matrix(2, 2))), dimension_error);
}

TEST(Softmax, Anchors) {
  Tape t;
  const Matrix u = ad::softmax_rows(t.constant({{0, 0, 0}})).value();
  for (double v : u.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const Matrix s = ad::softmax_rows(t.constant({{1000, 0, 0}})).value();
  EXPECT_NEAR(s[0], 1.0, 1e-12);
  EXPECT_NEAR(s[1], 0.0, 1e-12);
  const Matrix k = ad::softmax_rows(t.constant({{1, 2, 3}})).value();
  EXPECT_NEAR(k[0], 0.09003057, 1e-8);
  EXPECT_NEAR(k[1], 0.24472847, 1e-8);
  EXPECT_NEAR(k[2], 0.66524096, 1e-8);
}

TEST(Softmax, RowsSumToOneForLargeInputs) {
  Stream rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    Matrix x(4, 6);
    for (double& v : x.values()) v = rng.uniform(-1000, 1000);
    Tape t;
    const Matrix p = ad::softmax_rows(t.constant(x)).value();
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (double v : p.row_span(r)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Reduce, Anchors) {
  Tape t;
  EXPECT_EQ(ad::mean_rows(t.constant({{1, 3}, {3, 5}})).value(), (Matrix{{2, 4}}));
  Var c = ad::concat_cols({t.constant({{1}}), t.constant({{2}})});
  EXPECT_EQ(c.rows(), 1u);
  EXPECT_EQ(c.cols(), 2u);
  EXPECT_EQ(ad::sum_all(t.constant(Matrix(3, 3))).item(), 0.0);
}

TEST(Reduce, EmptyInputsAreDomainErrors) {
  Tape t;
  EXPECT_THROW(ad::concat_cols(std::span<const Var>{}), std::domain_error);
  EXPECT_THROW(ad::mean_all(t.constant(Matrix(0, 0))), std::domain_error);
  EXPECT_THROW(ad::concat_cols({t.constant(Matrix(2, 1)), t.constant(Matrix(3, 1))}), dimension_error);
}

TEST(LayerNorm, ConstantRowMapsToBias) {
  Tape t;
  Var y = ad::layer_norm(t.constant({{2.0, 2.0, 2.0}}), t.constant({{3, 4, 5}}), t.constant({{0.1, 0.2, 0.3}}));
  EXPECT_NEAR(y.value()[0], 0.1, 1e-12);
  EXPECT_NEAR(y.value()[1], 0.2, 1e-12);
  EXPECT_NEAR(y.value()[2], 0.3, 1e-12);
}

TEST(LayerNorm, RowsAreStandardized) {
  Tape t;
  Stream rng(3);
  Var y = ad::layer_norm(t.constant(lala::testing::normal_matrix(5, 8, rng)), t.constant(Matrix(1, 8, 1.0)),
                         t.constant(Matrix(1, 8, 0.0)));
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (double x : y.value().row_span(r)) m += x;
    m /= 8;
    for (double x : y.value().row_span(r)) v += (x - m) * (x - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v / 8, 1.0, 1e-4);
  }
}

TEST(Dropout, ZeroRateAndEvalModeAreIdentity) {
  Tape t;
  Stream rng(1);
  Var x = t.constant({{1, 2, 3}});
  EXPECT_EQ(ad::dropout(x, 0.0, rng, true).id, x.id);
  EXPECT_EQ(ad::dropout(x, 0.5, rng, false).id, x.id);
  EXPECT_THROW(ad::dropout(x, 1.0, rng, true), std::invalid_argument);
}

TEST(Dropout, ExpectationMatchesInputMonteCarlo) {
  Stream rng(11);
  const Matrix x{{1.0, -2.0, 0.5, 3.0}};
  Matrix acc(1, 4);
  const int samples = 100000;
  for (int s = 0; s < samples; ++s) {
    Tape t;
    acc += ad::dropout(t.constant(x), 0.1, rng, true).value();
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(acc[i] / samples, x[i], 0.01 * std::abs(x[i]));
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter p("p", 2, 2);
  p.value = Matrix{{1, 2}, {3, 4}};
  ParamRefs ps{&p};
  AdamState s(ps, 0.1);
  adam_step(ps, s);
  EXPECT_EQ(p.value, (Matrix{{1, 2}, {3, 4}}));
  EXPECT_EQ(s.step_count, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Parameter p("p", 1, 1);
  p.value = Matrix{{0.5}};
  p.grad = Matrix{{1.0}};
  ParamRefs ps{&p};
  AdamState s(ps, 0.1);
  adam_step(ps, s);
  EXPECT_NEAR(p.value[0], 0.4, 1e-7);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    Stream rng(9);
    Linear l("l", 4, 3, rng);
    ParamRefs ps;
    l.collect(ps);
    AdamState s(ps, 0.01);
    for (int k = 0; k < 10; ++k) {
      Tape t;
      zero_grad(ps);
      t.backward(lala::testing::project(l(t, t.constant(lala::testing::normal_matrix(5, 4, rng))), k));
      adam_step(ps, s);
    }
    return l.weight.value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, SecondBackwardIsRejected) {
  Tape t;
  Var x = t.variable({{1.0}});
  Var y = ad::mul(x, x);
  t.backward(y);
  EXPECT_THROW(t.backward(y), std::logic_error);
  EXPECT_THROW(Tape().backward(t.variable(Matrix(2, 1))), std::invalid_argument);
}

TEST(Tape, FanOutAccumulatesBothContributions) {
  Tape t;
  Var x = t.variable({{0.7}});
  Var y = ad::add(ad::mul(x, x), ad::scale(x, 3.0));  // dy/dx = 2x + 3
  t.backward(y);
  EXPECT_NEAR(x.grad()[0], 4.4, 1e-12);
}

TEST(Tape, ParametersReceiveGradientsOnlyWhenBound) {
  Parameter p("w", 1, 1);
  p.value = Matrix{{2.0}};
  Tape t;
  Var a = t.param(p);
  Var b = t.frozen(p);
  t.backward(ad::mul(a, b));
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
}

class GradientCheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCheck, MatchesCentralDifferencesOverTwentySeeds) {
  const auto cases = lala::testing::gradient_cases();
  const auto& c = cases[GetParam()];
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Stream rng(seed, 0x6763);
    const double err = lala::testing::check_inputs(c.build, c.inputs(rng));
    EXPECT_LT(err, 1e-4) << c.name << " seed " << seed;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCheck, ::testing::Range<std::size_t>(0, lala::testing::gradient_cases().size()),
                         [](const auto& info) { return std::string(lala::testing::gradient_cases()[info.param].name); });

TEST(Determinism, SameSeedSameValuesAndGradients) {
  auto run = [] {
    Stream rng(123);
    Tape t;
    Var x = t.variable(lala::testing::normal_matrix(3, 4, rng));
    Var w = t.variable(lala::testing::normal_matrix(4, 4, rng));
    Var y = ad::softmax_rows(ad::relu(ad::matmul(x, w)));
    t.backward(lala::testing::project(y, 3));
    return std::pair{y.value(), w.grad()};
  };
  EXPECT_EQ(run(), run());
}
