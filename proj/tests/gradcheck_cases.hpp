// Finite-difference gradient cases shared by the unit and acceptance suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "decg/gradcheck.hpp"
#include "decg/losses.hpp"
#include "decg/model.hpp"
#include "decg/ops.hpp"

namespace decg::testing {

struct GradReport {
  double worst = 0.0;       // max relative error over checked coordinates
  std::size_t checked = 0;
  std::size_t kinks = 0;    // coordinates skipped because the stencil straddles a kink
};

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

inline constexpr double kStep = 1e-4;
inline constexpr double kRelTol = 1e-4;
// Coordinates with |grad| below this are compared absolutely against it.
inline constexpr double kGradFloor = 1e-6;

/// Compares reverse-mode gradients of caller-owned leaves against central differences.
/// `loss` binds the leaves itself. A coordinate counts as a kink (and is skipped) when
/// the h and h/2 stencils disagree, i.e. a relu/max boundary lies inside [x - h, x + h].
inline GradReport check_leaf_gradients(const std::function<Var(Tape<double>&)>& loss,
                                       const std::vector<Tensor<double>*>& leaves,
                                       double h = kStep) {
  for (auto* t : leaves) {
    t->set_requires_grad(true);
    t->clear_grad();
  }
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }
  GradReport report;
  for (auto* leaf : leaves) {
    const Tensor<double> original = *leaf;
    auto f = [&](const Tensor<double>& probe) {
      std::copy(probe.data().begin(), probe.data().end(), leaf->data().begin());
      Tape<double> tape(false);
      return tape.value(loss(tape))[0];
    };
    const Tensor<double> fd = finite_diff_gradient(f, original, h);
    const Tensor<double> fd_half = finite_diff_gradient(f, original, h / 2);
    std::copy(original.data().begin(), original.data().end(), leaf->data().begin());
    auto analytic = std::as_const(*leaf).grad();
    for (std::size_t j = 0; j < fd.size(); ++j) {
      const double a = analytic.empty() ? 0.0 : analytic[j];
      if (std::abs(fd[j] - fd_half[j]) > 1e-3 * std::max(std::abs(fd[j]), kGradFloor)) {
        ++report.kinks;
        continue;
      }
      const double scale = std::max({std::abs(fd[j]), std::abs(a), kGradFloor});
      ++report.checked;
      report.worst = std::max(report.worst, std::abs(a - fd[j]) / scale);
    }
  }
  return report;
}

inline GradReport check_gradients(const Builder& build, std::vector<Tensor<double>> leaves,
                                  double h = kStep) {
  std::vector<Tensor<double>*> ptrs;
  for (auto& t : leaves) ptrs.push_back(&t);
  return check_leaf_gradients(
      [&](Tape<double>& tape) {
        std::vector<Var> vs;
        for (auto& t : leaves) vs.push_back(tape.parameter(t));
        return build(tape, vs);
      },
      ptrs, h);
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  Tensor<double> t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

/// Random projection to a scalar so every output coordinate contributes.
/// Uses its own stream so the weights never coincide with inputs drawn from `seed`.
inline Var project(Tape<double>& tape, Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return sum(tape, mul(tape, y, tape.constant(random_tensor(tape.shape(y), rng))));
}

inline Tensor<double> probs_like(std::size_t batch, std::size_t classes, std::mt19937_64& rng) {
  Tensor<double> logits = random_tensor(Shape{batch, classes}, rng);
  Tape<double> tape(false);
  return tape.value(softmax(tape, tape.constant(logits)));
}

struct NamedCase {
  std::string name;
  std::function<GradReport(std::uint64_t seed)> run;
};

/// One case per differentiable op and loss, plus composites.
inline std::vector<NamedCase> gradient_cases() {
  std::vector<NamedCase> cases;
  cases.push_back({"conv1d", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const std::size_t stride = 1 + seed % 2, pad = seed % 3;
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, conv1d(t, v[0], v[1], v[2], stride, pad), seed);
                         },
                         {random_tensor(Shape{2, 9, 3}, rng), random_tensor(Shape{3, 3, 4}, rng),
                          random_tensor(Shape{4}, rng)});
                   }});
  cases.push_back({"batch_norm1d.train", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           BatchNormState<double> state;
                           return project(
                               t, batch_norm1d(t, v[0], v[1], v[2], state, Mode::kTrain), seed);
                         },
                         {random_tensor(Shape{3, 5, 2}, rng), random_tensor(Shape{2}, rng),
                          random_tensor(Shape{2}, rng)});
                   }});
  cases.push_back({"batch_norm1d.eval", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     BatchNormState<double> state(2);
                     state.running_mean[0] = 0.3;
                     state.running_var[1] = 2.5;
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(
                               t, batch_norm1d(t, v[0], v[1], v[2], state, Mode::kEval), seed);
                         },
                         {random_tensor(Shape{2, 4, 2}, rng), random_tensor(Shape{2}, rng),
                          random_tensor(Shape{2}, rng)});
                   }});
  cases.push_back({"relu", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, relu(t, v[0]), seed);
                         },
                         {random_tensor(Shape{2, 6, 3}, rng)});
                   }});
  cases.push_back({"dropout", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           Rng mask_rng(seed);
                           return project(t, dropout(t, v[0], 0.3, Mode::kTrain, mask_rng), seed);
                         },
                         {random_tensor(Shape{2, 6, 3}, rng)});
                   }});
  cases.push_back({"pool1d.max", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, pool1d(t, v[0], 3, 2, PoolKind::kMax), seed);
                         },
                         {random_tensor(Shape{2, 9, 2}, rng)});
                   }});
  cases.push_back({"pool1d.avg", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, pool1d(t, v[0], 2, 4, PoolKind::kAvg), seed);
                         },
                         {random_tensor(Shape{2, 10, 2}, rng)});
                   }});
  cases.push_back({"global_avg_pool", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, global_avg_pool(t, v[0]), seed);
                         },
                         {random_tensor(Shape{3, 5, 4}, rng)});
                   }});
  cases.push_back({"dense_affine", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, dense_affine(t, v[0], v[1], v[2]), seed);
                         },
                         {random_tensor(Shape{3, 4}, rng), random_tensor(Shape{4, 5}, rng),
                          random_tensor(Shape{5}, rng)});
                   }});
  cases.push_back({"softmax", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, softmax(t, v[0]), seed);
                         },
                         {random_tensor(Shape{3, 4}, rng, 2.0)});
                   }});
  cases.push_back({"concat_channels", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, concat_channels(t, {v[0], v[1], v[0]}), seed);
                         },
                         {random_tensor(Shape{2, 3, 2}, rng), random_tensor(Shape{2, 3, 3}, rng)});
                   }});
  cases.push_back({"add_mul_scale", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return project(t, scale(t, add(t, mul(t, v[0], v[1]), v[0]), 0.7),
                                          seed);
                         },
                         {random_tensor(Shape{2, 3}, rng), random_tensor(Shape{2, 3}, rng)});
                   }});
  cases.push_back({"weighted_cross_entropy", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const std::vector<int> labels{0, 2, 1, 2};
                     const ClassWeights w{0.5, 2.0, 1.3};
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return weighted_cross_entropy(t, softmax(t, v[0]), labels, w);
                         },
                         {random_tensor(Shape{4, 3}, rng)});
                   }});
  cases.push_back({"focal_loss", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const std::vector<int> labels{1, 0, 3, 3, 2};
                     const ClassWeights w{1.0, 0.7, 1.9, 1.1};
                     const double gamma = 0.5 + static_cast<double>(seed % 4) * 0.5;
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return focal_loss(t, softmax(t, v[0]), labels, w, gamma);
                         },
                         {random_tensor(Shape{5, 4}, rng)});
                   }});
  cases.push_back({"l2_penalty", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           return l2_penalty(t, {v[0], v[1]}, 1e-4);
                         },
                         {random_tensor(Shape{3, 2, 4}, rng), random_tensor(Shape{1, 4, 2}, rng)});
                   }});
  cases.push_back({"composite conv-relu-gap-dense-softmax-ce", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     const std::vector<int> labels{0, 1, 2, 1};
                     const ClassWeights w{1.0, 1.0, 1.0};
                     return check_gradients(
                         [=](Tape<double>& t, const std::vector<Var>& v) {
                           Var h = relu(t, conv1d(t, v[0], v[1], v[2], 1, 1));
                           Var logits = dense_affine(t, global_avg_pool(t, h), v[3], v[4]);
                           return weighted_cross_entropy(t, softmax(t, logits), labels, w);
                         },
                         {random_tensor(Shape{4, 32, 2}, rng), random_tensor(Shape{3, 2, 5}, rng),
                          random_tensor(Shape{5}, rng), random_tensor(Shape{5, 3}, rng),
                          random_tensor(Shape{3}, rng)});
                   }});
  cases.push_back({"network (train mode, focal + l2)", [](std::uint64_t seed) {
                     ModelConfig cfg;
                     cfg.num_blocks = 2;
                     cfg.layers_per_block = 2;
                     cfg.growth_rate = 3;
                     cfg.reduction = 0.5;
                     cfg.dropout_rate = 0.2;
                     cfg.stem_channels = 4;
                     cfg.stem_kernel = 5;
                     cfg.stem_stride = 2;
                     cfg.stem_pool_window = 2;
                     cfg.stem_pool_stride = 1;
                     cfg.num_classes = 3;
                     cfg.input_length = 24;
                     Rng init(seed);
                     Network<double> net = build_model<double>(cfg, init);
                     std::mt19937_64 rng(seed + 1);
                     Tensor<double> x = random_tensor(Shape{3, 24, 1}, rng);
                     const std::vector<int> labels{0, 2, 1};
                     const ClassWeights w{0.8, 1.5, 1.1};
                     std::vector<Tensor<double>*> leaves{&x};
                     for (auto& p : net.parameters()) leaves.push_back(p.tensor);
                     return check_leaf_gradients(
                         [&](Tape<double>& t) {
                           Rng drop(seed + 7);
                           auto r = forward(t, net, t.parameter(x), Mode::kTrain, drop);
                           Var loss = focal_loss(t, r.probs, labels, w, 1.5);
                           return add(t, loss, l2_penalty(t, r.conv_kernels, 1e-2));
                         },
                         leaves);
                   }});
  return cases;
}

}  // namespace decg::testing
