#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "decg/ops.hpp"

namespace decg {

/// Per-class loss multipliers.
using ClassWeights = std::vector<double>;

namespace detail {

inline constexpr double kLogFloor = 1e-12;

template <class T>
void check_labels(const Tensor<T>& probs, std::span<const int> labels,
                  const ClassWeights& weights, const char* op) {
  require_rank(probs.shape(), 2, op);
  const std::size_t batch = probs.dim(0), classes = probs.dim(1);
  require(labels.size() == batch, std::string(op) + ": " + std::to_string(labels.size()) +
                                      " labels for a batch of " + std::to_string(batch));
  require(weights.size() == classes, std::string(op) + ": expected " +
                                         std::to_string(classes) + " class weights, got " +
                                         std::to_string(weights.size()));
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(labels[b]) +
                                  " out of range for " + std::to_string(classes) + " classes");
    }
  }
}

}  // namespace detail

/// Mean over the batch of weight[y] * (1 - p_y)^gamma * -log(max(p_y, 1e-12)).
/// gamma = 0 is the weighted cross-entropy.
template <class T>
Var focal_loss(Tape<T>& tape, Var probs, std::span<const int> labels,
               const ClassWeights& weights, double gamma) {
  if (gamma < 0.0) {
    throw std::invalid_argument("focal_loss: gamma must be >= 0, got " + std::to_string(gamma));
  }
  const auto& p = tape.value(probs);
  detail::check_labels(p, labels, weights, "focal_loss");
  const std::size_t batch = p.dim(0), classes = p.dim(1);
  std::vector<int> ys(labels.begin(), labels.end());

  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double py = p.at(b, static_cast<std::size_t>(ys[b]));
    const double nll = -std::log(std::max(py, detail::kLogFloor));
    const double modulator = gamma == 0.0 ? 1.0 : std::pow(1.0 - py, gamma);
    total += weights[ys[b]] * modulator * nll;
  }
  const T loss = static_cast<T>(total / static_cast<double>(batch));

  return tape.record(
      Tensor<T>(Shape{1}, {loss}), tape.any_needs_grad(probs),
      [=](Tape<T>& tp, Var o) {
        const double g = tp.grad(o)[0];
        const auto& pv = tp.value(probs);
        auto dp = tp.grad(probs);
        for (std::size_t b = 0; b < batch; ++b) {
          const std::size_t y = static_cast<std::size_t>(ys[b]);
          const double py = pv.at(b, y);
          // d/dp of -log(max(p, floor)) vanishes below the floor.
          const double dnll = py > detail::kLogFloor ? -1.0 / py : 0.0;
          double d = dnll;
          if (gamma != 0.0) {
            const double q = 1.0 - py;
            const double nll = -std::log(std::max(py, detail::kLogFloor));
            const double dmod = q > 0.0 ? -gamma * std::pow(q, gamma - 1.0) : 0.0;
            d = std::pow(q, gamma) * dnll + dmod * nll;
          }
          dp[b * classes + y] +=
              static_cast<T>(g * weights[y] * d / static_cast<double>(batch));
        }
      },
      "focal_loss");
}

template <class T>
Var weighted_cross_entropy(Tape<T>& tape, Var probs, std::span<const int> labels,
                           const ClassWeights& weights) {
  return focal_loss(tape, probs, labels, weights, 0.0);
}

/// lambda * sum of squares over the given tensors (no 1/2 factor).
template <class T>
Var l2_penalty(Tape<T>& tape, const std::vector<Var>& tensors, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("l2_penalty: lambda must be >= 0");
  double total = 0.0;
  bool needs = false;
  for (Var v : tensors) {
    for (T w : tape.value(v).data()) total += static_cast<double>(w) * w;
    needs = needs || tape.any_needs_grad(v);
  }
  const T lam = static_cast<T>(lambda);
  return tape.record(
      Tensor<T>(Shape{1}, {static_cast<T>(lambda * total)}), needs && lambda > 0.0,
      [=](Tape<T>& tp, Var o) {
        const T g = tp.grad(o)[0];
        for (Var v : tensors) {
          if (!tp.needs_grad(v)) continue;
          const auto& w = tp.value(v);
          auto dw = tp.grad(v);
          for (std::size_t i = 0; i < w.size(); ++i) dw[i] += g * T{2} * lam * w[i];
        }
      },
      "l2_penalty");
}

}  // namespace decg
