#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "decg/tensor.hpp"

namespace decg {

enum class LossKind { kPlain, kClassWeighted, kFocal };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::kPlain: return "plain";
    case LossKind::kClassWeighted: return "class-weighted";
    case LossKind::kFocal: return "focal";
  }
  return "?";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "plain" || s == "none" || s == "unweighted") return LossKind::kPlain;
  if (s == "class-weighted" || s == "class_weighted" || s == "weighted")
    return LossKind::kClassWeighted;
  if (s == "focal") return LossKind::kFocal;
  throw std::invalid_argument("unknown loss kind '" + s + "'");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  double l2_lambda = 1e-4;
  int epochs = 25;
  double decay_factor = 0.1;
  std::vector<double> decay_points{0.5, 0.75};
  int batch_size = 32;
  LossKind loss_kind = LossKind::kClassWeighted;
  double focal_gamma = 2.0;
  std::uint64_t seed = 0;
  bool keep_best = false;  // select best-validation epoch instead of last

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0))
      throw std::invalid_argument("decay_factor must be in (0, 1]");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (l2_lambda < 0.0) throw std::invalid_argument("l2_lambda must be >= 0");
    if (focal_gamma < 0.0) throw std::invalid_argument("focal_gamma must be >= 0");
    double prev = 0.0;
    for (double p : decay_points) {
      if (!(p > prev && p < 1.0))
        throw std::invalid_argument("decay points must be strictly increasing in (0, 1)");
      prev = p;
    }
  }
};

/// Step decay: the base rate times decay_factor for every boundary floor(p * epochs) already reached.
inline double learning_rate_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside [0, " +
                            std::to_string(cfg.epochs) + ")");
  }
  double lr = cfg.learning_rate;
  for (double p : cfg.decay_points) {
    const int boundary = static_cast<int>(std::floor(p * cfg.epochs));
    if (epoch >= boundary) lr *= cfg.decay_factor;
  }
  return lr;
}

/// A named trainable tensor.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <class T>
class Adam {
 public:
  struct Moments {
    std::vector<T> m, v;
  };

  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  std::int64_t steps() const { return t_; }
  const std::vector<Moments>& moments() const { return moments_; }

  /// Applies one update using each parameter's grad buffer.
  void step(const std::vector<ParamRef<T>>& params, double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be > 0");
    if (moments_.empty()) {
      for (const auto& p : params) moments_.push_back({std::vector<T>(p.tensor->size(), T{0}),
                                                       std::vector<T>(p.tensor->size(), T{0})});
    }
    if (moments_.size() != params.size())
      throw ShapeError("adam: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& p = params[i];
      if (moments_[i].m.size() != p.tensor->size())
        throw ShapeError("adam: parameter " + p.name + " changed size");
      if (!p.tensor->has_grad()) continue;
      for (T g : p.tensor->grad())
        if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient in " + p.name);
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& w = *params[i].tensor;
      auto& [m, v] = moments_[i];
      auto data = w.data();
      std::span<const T> grad;
      if (w.has_grad()) grad = std::as_const(w).grad();
      for (std::size_t j = 0; j < w.size(); ++j) {
        const T g = grad.empty() ? T{0} : grad[j];
        m[j] = b1 * m[j] + (T{1} - b1) * g;
        v[j] = b2 * v[j] + (T{1} - b2) * g * g;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        data[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

 private:
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Moments> moments_;
};

}  // namespace decg
