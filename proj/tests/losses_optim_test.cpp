#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "decg/losses.hpp"
#include "decg/optim.hpp"

namespace decg {
namespace {

double loss_value(const std::vector<double>& probs, std::size_t k, std::vector<int> labels,
                  const ClassWeights& w, double gamma) {
  Tape<double> tape;
  Var p = tape.constant(Tensor<double>(Shape{labels.size(), k}, probs));
  return tape.value(focal_loss(tape, p, labels, w, gamma))[0];
}

TEST(CrossEntropy, HandValues) {
  EXPECT_NEAR(loss_value({0.5, 0.5}, 2, {0}, {1, 1}, 0.0), 0.693147, 1e-6);
  EXPECT_NEAR(loss_value({0.5, 0.5}, 2, {0}, {2, 1}, 0.0), 1.386294, 1e-6);
  EXPECT_EQ(loss_value({1.0, 0.0}, 2, {0}, {1, 1}, 0.0), 0.0);
  // probability 0 hits the log floor instead of producing inf
  EXPECT_NEAR(loss_value({0.0, 1.0}, 2, {0}, {1, 1}, 0.0), -std::log(1e-12), 1e-9);

  Tape<double> tape;
  Var p = tape.constant(Tensor<double>(Shape{1, 2}, {0.5, 0.5}));
  const std::vector<int> bad{2};
  EXPECT_THROW(weighted_cross_entropy(tape, p, bad, {1, 1}), std::invalid_argument);
}

TEST(Focal, HandValuesAndReduction) {
  EXPECT_NEAR(loss_value({0.9, 0.1}, 2, {0}, {1, 1}, 2.0), 0.0010536, 1e-7);
  EXPECT_LT(loss_value({0.99, 0.01}, 2, {0}, {1, 1}, 2.0), loss_value({0.99, 0.01}, 2, {0}, {1, 1}, 0.0) * 1e-3);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> probs;
    for (int b = 0; b < 4; ++b) {
      double a = u(rng), c = u(rng), d = u(rng);
      const double s = a + c + d;
      probs.insert(probs.end(), {a / s, c / s, d / s});
    }
    const std::vector<int> labels{0, 2, 1, 2};
    const ClassWeights w{0.5, 1.5, 2.0};
    Tape<double> tape;
    Var p = tape.constant(Tensor<double>(Shape{4, 3}, probs));
    EXPECT_NEAR(tape.value(focal_loss(tape, p, labels, w, 0.0))[0],
                tape.value(weighted_cross_entropy(tape, p, labels, w))[0], 1e-12);
    // unit weights reduce to plain cross-entropy
    double plain = 0;
    for (int b = 0; b < 4; ++b) plain -= std::log(probs[b * 3 + labels[b]]) / 4.0;
    EXPECT_NEAR(loss_value(probs, 3, labels, {1, 1, 1}, 0.0), plain, 1e-12);
  }
  Tape<double> tape;
  Var p = tape.constant(Tensor<double>(Shape{1, 2}, {0.5, 0.5}));
  const std::vector<int> y{0};
  EXPECT_THROW(focal_loss(tape, p, y, {1, 1}, -1.0), std::invalid_argument);
}

TEST(L2, PenaltyOnKernels) {
  Tape<double> tape;
  Tensor<double> w(Shape{2}, {1.0, 2.0});
  Var v = tape.parameter(w);
  EXPECT_NEAR(tape.value(l2_penalty(tape, {v}, 1e-4))[0], 5e-4, 1e-15);
  EXPECT_EQ(tape.value(l2_penalty(tape, {v}, 0.0))[0], 0.0);
  EXPECT_THROW(l2_penalty(tape, {v}, -1.0), std::invalid_argument);
}

TEST(Adam, FirstStepIsSignNormalized) {
  Tensor<double> w(Shape{1}, {1.0});
  w.grad()[0] = 4.0;
  Adam<double> adam;
  adam.step({{"w", &w}}, 1e-3);
  EXPECT_NEAR(w[0], 0.999, 1e-9);
  EXPECT_EQ(adam.steps(), 1);

  // doubling gradients barely moves the first step
  Tensor<double> a(Shape{1}, {0.0}), b(Shape{1}, {0.0});
  a.grad()[0] = 0.3;
  b.grad()[0] = 0.6;
  Adam<double> oa, ob;
  oa.step({{"a", &a}}, 1e-3);
  ob.step({{"b", &b}}, 1e-3);
  EXPECT_LT(std::abs(a[0] - b[0]) / std::abs(a[0]), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> w(Shape{3}, {1.0, -2.0, 3.0});
  w.zero_grad();
  Adam<double> adam;
  adam.step({{"w", &w}}, 1e-3);
  EXPECT_EQ(std::vector<double>(w.data().begin(), w.data().end()), (std::vector<double>{1.0, -2.0, 3.0}));
  for (const auto& m : adam.moments())
    for (double v : m.v) EXPECT_GE(v, 0.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  Tensor<double> w(Shape{1}, {0.0});
  Adam<double> adam;
  int steps = 0;
  while (std::abs(w[0] - 3.0) >= 0.01 && steps < 5000) {
    w.grad()[0] = 2.0 * (w[0] - 3.0);
    adam.step({{"w", &w}}, 1e-2);
    ++steps;
  }
  EXPECT_LT(std::abs(w[0] - 3.0), 0.01);
  EXPECT_LT(steps, 5000);
}

TEST(Adam, RejectsNonFiniteGradientNamingParameter) {
  Tensor<double> w(Shape{1}, {0.0});
  w.grad()[0] = std::nan("");
  Adam<double> adam;
  try {
    adam.step({{"block2.layer1.conv.kernel", &w}}, 1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("block2.layer1.conv.kernel"), std::string::npos);
  }
}

TEST(Schedule, TwoStepDecay) {
  TrainConfig c;
  c.epochs = 25;
  for (int e = 0; e < 25; ++e) {
    const double expect = e < 12 ? 1e-3 : e < 18 ? 1e-4 : 1e-5;
    EXPECT_NEAR(learning_rate_at_epoch(c, e), expect, 1e-15) << e;
  }
  c.epochs = 4;
  const std::vector<double> four{1e-3, 1e-3, 1e-4, 1e-5};
  for (int e = 0; e < 4; ++e) EXPECT_NEAR(learning_rate_at_epoch(c, e), four[e], 1e-15);
  EXPECT_THROW(learning_rate_at_epoch(c, 4), std::out_of_range);
  EXPECT_THROW(learning_rate_at_epoch(c, -1), std::out_of_range);
  c.decay_factor = 1.0;
  for (int e = 0; e < 4; ++e) EXPECT_EQ(learning_rate_at_epoch(c, e), 1e-3);
  c.epochs = 50;
  c.decay_factor = 0.1;
  for (int e = 1; e < 50; ++e) EXPECT_LE(learning_rate_at_epoch(c, e), learning_rate_at_epoch(c, e - 1));
}

TEST(TrainConfigValidation, Invariants) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.decay_factor = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.decay_points = {0.75, 0.5};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(parse_loss_kind("class-weighted"), LossKind::kClassWeighted);
  EXPECT_THROW(parse_loss_kind("smote"), std::invalid_argument);
}

}  // namespace
}  // namespace decg
