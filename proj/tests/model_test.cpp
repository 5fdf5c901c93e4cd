#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "decg/model.hpp"
#include "decg/serialize.hpp"

namespace decg {
namespace {

Tensor<double> random_batch(std::size_t b, std::size_t len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor<double> x(Shape{b, len, 1});
  for (double& v : x.data()) v = d(rng);
  return x;
}

// Runs one train-mode step so the running statistics are no longer at their defaults.
template <class T>
void warm_up(Network<T>& net, const Tensor<T>& x) {
  Tape<T> tape(false);
  Rng rng(3);
  forward(tape, net, tape.constant(x), Mode::kTrain, rng);
}

ModelConfig small_cinc() {
  ModelConfig c = cinc_preset();
  c.input_length = 1500;  // keeps the test quick; same topology
  c.transition_pool_stride = 2;
  return c;
}

TEST(ChannelArithmetic, DenseBlockAndTransition) {
  EXPECT_EQ(dense_block_channels(16, 3, 12), 52);
  EXPECT_EQ(dense_block_channels(7, 0, 12), 7);
  EXPECT_EQ(dense_block_channels(1, 1, 1), 2);
  EXPECT_EQ(transition_channels(52, 0.25), 13);
  EXPECT_EQ(transition_channels(10, 1.0), 10);
  EXPECT_EQ(transition_channels(3, 0.25), 1);
}

TEST(BuildModel, ConstructedBlockHasPredictedChannels) {
  ModelConfig c = mitbih_preset();
  c.stem_channels = 16;
  Rng rng(1);
  auto net = build_model<double>(c, rng);
  const auto pred = predict(net, random_batch(2, 187, 1));
  ASSERT_GE(pred.stages.size(), 3u);
  EXPECT_EQ(pred.stages[1].stage, "block1");
  EXPECT_EQ(pred.stages[1].channels, 52u);
  EXPECT_EQ(pred.stages[2].stage, "transition1");
  EXPECT_EQ(pred.stages[2].channels, 13u);
}

TEST(BuildModel, PresetsBuildAndMatchPlan) {
  for (const ModelConfig& c : {mitbih_preset(), small_cinc()}) {
    Rng rng(5);
    auto net = build_model<double>(c, rng);
    const auto pred = predict(net, random_batch(2, static_cast<std::size_t>(c.input_length), 2));
    EXPECT_EQ(pred.stages, plan_stages(c));
    EXPECT_LE(pred.stages.back().length, static_cast<std::size_t>(c.input_length));
    EXPECT_GE(pred.stages.back().length, 1u);
  }
  Rng rng(5);
  auto full = build_model<float>(cinc_preset(), rng);
  EXPECT_EQ(full.blocks.size(), 5u);
  EXPECT_EQ(plan_stages(cinc_preset()).back().length, 18u);
}

TEST(BuildModel, RejectsBadConfigs) {
  ModelConfig c = mitbih_preset();
  c.num_blocks = 0;
  Rng rng(1);
  EXPECT_THROW(build_model<double>(c, rng), std::invalid_argument);

  c = mitbih_preset();
  c.num_blocks = 9;  // pools 187 down past 1
  try {
    build_model<double>(c, rng);
    FAIL() << "expected a length-collapse error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("transition"), std::string::npos) << e.what();
  }
}

TEST(ParamCount, MitbihPresetNearReportedSize) {
  Rng a(1), b(99);
  auto n1 = build_model<float>(mitbih_preset(), a);
  auto n2 = build_model<float>(mitbih_preset(), b);
  const auto count = param_count(n1);
  EXPECT_GE(count, 30000u);
  EXPECT_LE(count, 70000u);
  EXPECT_EQ(count, param_count(n2));
}

TEST(ParamCount, HeadWithTwoChannelsAndThreeClasses) {
  ModelConfig c = mitbih_preset();
  c.num_blocks = 1;
  c.layers_per_block = 1;
  c.growth_rate = 1;
  c.stem_channels = 1;
  c.num_classes = 3;
  Rng rng(1);
  auto net = build_model<double>(c, rng);
  std::size_t head = 0, total = 0;
  for (const auto& p : net.parameters()) {
    total += p.tensor->size();
    if (p.name.rfind("head.", 0) == 0) head += p.tensor->size();
  }
  EXPECT_EQ(head, 9u);
  EXPECT_EQ(total, param_count(net));
}

TEST(Forward, ProbabilitiesAndDeterminism) {
  Rng rng(2);
  auto net = build_model<double>(mitbih_preset(), rng);
  const auto x = random_batch(3, 187, 4);
  warm_up(net, x);
  const auto a = predict(net, x);
  const auto b = predict(net, x);
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 5; ++k) s += a.probs.at(i, k);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_EQ(std::vector<double>(a.probs.data().begin(), a.probs.data().end()),
            std::vector<double>(b.probs.data().begin(), b.probs.data().end()));
  EXPECT_THROW(predict(net, random_batch(1, 186, 1)), ShapeError);
}

TEST(Forward, HeadRecomputedFromFeatures) {
  for (const ModelConfig& c : {mitbih_preset(), small_cinc()}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      Rng rng(seed);
      auto net = build_model<double>(c, rng);
      const auto x = random_batch(2, static_cast<std::size_t>(c.input_length), seed);
      warm_up(net, x);
      const auto p = predict(net, x);
      const std::size_t len = p.features.dim(1), ch = p.features.dim(2);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t k = 0; k < static_cast<std::size_t>(c.num_classes); ++k) {
          double s = 0.0;
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t i = 0; i < ch; ++i) s += net.head_weight.at(i, k) * p.features.at(b, t, i);
          EXPECT_NEAR(p.logits.at(b, k), s / static_cast<double>(len) + net.head_bias[k], 1e-5);
        }
    }
  }
}

TEST(Forward, DropoutRateZeroLeavesEvalUnchanged) {
  ModelConfig c = mitbih_preset();
  Rng r1(8), r2(8);
  auto with = build_model<double>(c, r1);
  c.dropout_rate = 0.0;
  auto without = build_model<double>(c, r2);
  const auto x = random_batch(2, 187, 9);
  const auto a = predict(with, x), b = predict(without, x);
  for (std::size_t i = 0; i < a.probs.size(); ++i) EXPECT_EQ(a.probs[i], b.probs[i]);
}

TEST(Serialize, RoundTripPreservesPredictions) {
  Rng rng(4);
  auto net = build_model<float>(mitbih_preset(), rng);
  Tensor<float> x = random_batch(2, 187, 5).cast<float>();
  warm_up(net, x);
  const std::string bytes = serialize_weights(net);
  EXPECT_EQ(bytes.substr(0, 5), "DECG1");
  auto back = deserialize_weights<float>(bytes);
  EXPECT_EQ(back.config, net.config);
  EXPECT_EQ(serialize_weights(back), bytes);
  const auto a = predict(net, x), b = predict(back, x);
  for (std::size_t i = 0; i < a.probs.size(); ++i) EXPECT_EQ(a.probs[i], b.probs[i]);
  EXPECT_EQ(model_hash(net), model_hash(back));
  EXPECT_EQ(model_hash(net).size(), 16u);
}

TEST(Serialize, RejectsCorruptFiles) {
  Rng rng(4);
  auto net = build_model<float>(mitbih_preset(), rng);
  std::string bytes = serialize_weights(net);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_weights<float>(bad), FormatError);
  EXPECT_THROW(deserialize_weights<float>(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_weights<float>(bytes + "x"), FormatError);
}

}  // namespace
}  // namespace decg
