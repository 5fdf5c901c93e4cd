#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "decg/tape.hpp"
#include "decg/tensor.hpp"

namespace decg {

enum class Mode { kTrain, kEval };
enum class PoolKind { kMax, kAvg };

using Rng = std::mt19937_64;

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

inline void require_rank(const Shape& s, std::size_t rank, const char* op) {
  require(s.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                " input, got shape " + s.str());
}

template <class T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Arithmetic
// ---------------------------------------------------------------------------

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  detail::require(x.shape() == y.shape(),
                  "add: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return tape.record(
      std::move(out), tape.any_needs_grad(a, b),
      [a, b](Tape<T>& tp, Var o) {
        auto g = tp.grad(o);
        if (tp.needs_grad(a)) detail::accumulate<T>(tp.grad(a), g);
        if (tp.needs_grad(b)) detail::accumulate<T>(tp.grad(b), g);
      },
      "add");
}

template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  const auto& x = tape.value(a);
  const auto& y = tape.value(b);
  detail::require(x.shape() == y.shape(),
                  "mul: shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return tape.record(
      std::move(out), tape.any_needs_grad(a, b),
      [a, b](Tape<T>& tp, Var o) {
        auto g = tp.grad(o);
        const auto& xv = tp.value(a);
        const auto& yv = tp.value(b);
        if (tp.needs_grad(a)) {
          auto ga = tp.grad(a);
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
        }
        if (tp.needs_grad(b)) {
          auto gb = tp.grad(b);
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
        }
      },
      "mul");
}

template <class T>
Var scale(Tape<T>& tape, Var a, T factor) {
  const auto& x = tape.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return tape.record(
      std::move(out), tape.any_needs_grad(a),
      [a, factor](Tape<T>& tp, Var o) {
        auto g = tp.grad(o);
        auto ga = tp.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
      },
      "scale");
}

/// Sum of all elements as a shape-(1) tensor.
template <class T>
Var sum(Tape<T>& tape, Var a) {
  const auto& x = tape.value(a);
  T total{0};
  for (T v : x.data()) total += v;
  return tape.record(
      Tensor<T>(Shape{1}, {total}), tape.any_needs_grad(a),
      [a](Tape<T>& tp, Var o) {
        const T g = tp.grad(o)[0];
        for (T& v : tp.grad(a)) v += g;
      },
      "sum");
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

/// Output length of a strided window sweep over `length` samples.
inline std::size_t sweep_length(std::size_t length, std::size_t window, std::size_t stride,
                                std::size_t padding = 0) {
  return (length + 2 * padding - window) / stride + 1;
}

/// 1D cross-correlation over (B,T,Cin) with kernel (k,Cin,Cout). `bias` may be an invalid Var.
template <class T>
Var conv1d(Tape<T>& tape, Var input, Var kernel, Var bias, std::size_t stride,
           std::size_t padding) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(kernel);
  detail::require_rank(x.shape(), 3, "conv1d");
  detail::require_rank(w.shape(), 3, "conv1d kernel");
  detail::require(stride >= 1, "conv1d: stride must be >= 1");
  const std::size_t batch = x.dim(0), len = x.dim(1), cin = x.dim(2);
  const std::size_t k = w.dim(0), cout = w.dim(2);
  detail::require(w.dim(1) == cin, "conv1d: input has " + std::to_string(cin) +
                                       " channels but kernel " + w.shape().str() + " expects " +
                                       std::to_string(w.dim(1)));
  detail::require(k <= len + 2 * padding, "conv1d: kernel size " + std::to_string(k) +
                                              " exceeds padded length " +
                                              std::to_string(len + 2 * padding));
  if (bias.valid()) {
    detail::require(tape.shape(bias) == Shape{cout}, "conv1d: bias shape " +
                                                         tape.shape(bias).str() +
                                                         " does not match " + std::to_string(cout));
  }
  const std::size_t padded = len + 2 * padding;
  const std::size_t out_len = sweep_length(len, k, stride, padding);
  const auto wm = detail::ConstMatMap<T>(w.data().data(), k * cin, cout);

  Tensor<T> out(Shape{batch, out_len, cout});
  std::vector<T> scratch(padding ? padded * cin : 0, T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* src = x.data().data() + b * len * cin;
    if (padding) {
      std::copy(src, src + len * cin, scratch.begin() + padding * cin);
      src = scratch.data();
    }
    detail::ConstStridedMap<T> windows(src, out_len, k * cin,
                                       Eigen::OuterStride<>(stride * cin));
    detail::MatMap<T> ob(out.data().data() + b * out_len * cout, out_len, cout);
    ob.noalias() = windows * wm;
    if (bias.valid()) {
      const auto& bv = tape.value(bias);
      for (std::size_t t = 0; t < out_len; ++t)
        for (std::size_t o = 0; o < cout; ++o) ob(t, o) += bv[o];
    }
  }

  auto backward = [=](Tape<T>& tp, Var o) {
    const auto& xv = tp.value(input);
    const auto& wv = tp.value(kernel);
    auto g = tp.grad(o);
    const auto wmat = detail::ConstMatMap<T>(wv.data().data(), k * cin, cout);
    std::vector<T> xpad(padding ? padded * cin : 0, T{0});
    std::vector<T> dpad(padded * cin);
    detail::RowMat<T> dwin(out_len, k * cin);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* src = xv.data().data() + b * len * cin;
      if (padding) {
        std::copy(src, src + len * cin, xpad.begin() + padding * cin);
        src = xpad.data();
      }
      detail::ConstStridedMap<T> windows(src, out_len, k * cin,
                                         Eigen::OuterStride<>(stride * cin));
      const auto gb = detail::ConstMatMap<T>(g.data() + b * out_len * cout, out_len, cout);
      if (tp.needs_grad(kernel)) {
        detail::MatMap<T> dw(tp.grad(kernel).data(), k * cin, cout);
        dw.noalias() += windows.transpose() * gb;
      }
      if (bias.valid() && tp.needs_grad(bias)) {
        auto db = tp.grad(bias);
        for (std::size_t t = 0; t < out_len; ++t)
          for (std::size_t c = 0; c < cout; ++c) db[c] += gb(t, c);
      }
      if (tp.needs_grad(input)) {
        dwin.noalias() = gb * wmat.transpose();
        std::fill(dpad.begin(), dpad.end(), T{0});
        for (std::size_t t = 0; t < out_len; ++t) {
          T* dst = dpad.data() + t * stride * cin;
          const T* row = dwin.data() + t * k * cin;
          for (std::size_t i = 0; i < k * cin; ++i) dst[i] += row[i];
        }
        auto dx = tp.grad(input);
        T* dxb = dx.data() + b * len * cin;
        const T* from = dpad.data() + padding * cin;
        for (std::size_t i = 0; i < len * cin; ++i) dxb[i] += from[i];
      }
    }
  };
  return tape.record(std::move(out), tape.any_needs_grad(input, kernel, bias), backward,
                     "conv1d");
}

/// Per-channel running statistics for batch normalization.
template <class T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
  bool initialized() const { return !running_mean.empty() && !running_var.empty(); }
};

namespace detail {

// `update` receives the momentum-averaged batch statistics in train mode.
template <class T>
Var batch_norm_impl(Tape<T>& tape, Var input, Var gamma, Var beta,
                    const BatchNormState<T>& state, BatchNormState<T>* update, Mode mode,
                    T momentum, T eps) {
  const auto& x = tape.value(input);
  detail::require_rank(x.shape(), 3, "batch_norm1d");
  detail::require(eps > T{0}, "batch_norm1d: eps must be positive");
  const std::size_t channels = x.dim(2);
  const std::size_t count = x.dim(0) * x.dim(1);
  detail::require(tape.shape(gamma) == Shape{channels} && tape.shape(beta) == Shape{channels},
                  "batch_norm1d: gamma/beta must have shape (" + std::to_string(channels) + ")");
  const bool train = mode == Mode::kTrain;

  std::vector<T> mean(channels, T{0}), invstd(channels);
  if (train) {
    std::vector<double> acc(channels, 0.0), acc2(channels, 0.0);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < channels; ++c) acc[c] += x[i * channels + c];
    for (std::size_t c = 0; c < channels; ++c) acc[c] /= static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x[i * channels + c] - acc[c];
        acc2[c] += d * d;
      }
    if (update == nullptr) {
      throw std::invalid_argument("batch_norm1d: train mode needs mutable running stats");
    }
    if (!update->initialized()) *update = BatchNormState<T>(channels);
    detail::require(update->running_mean.size() == channels,
                    "batch_norm1d: running statistics have the wrong channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      const double var = acc2[c] / static_cast<double>(count);
      mean[c] = static_cast<T>(acc[c]);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      auto& rm = update->running_mean[c];
      auto& rv = update->running_var[c];
      rm = momentum * rm + (T{1} - momentum) * mean[c];
      rv = momentum * rv + (T{1} - momentum) * static_cast<T>(var);
    }
  } else {
    if (!state.initialized()) {
      throw std::invalid_argument("batch_norm1d: eval mode requires initialized running stats");
    }
    detail::require(state.running_mean.size() == channels,
                    "batch_norm1d: running statistics have the wrong channel count");
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      invstd[c] = T{1} / std::sqrt(state.running_var[c] + eps);
    }
  }

  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t j = i * channels + c;
      out[j] = gv[c] * (x[j] - mean[c]) * invstd[c] + bv[c];
    }

  auto backward = [=](Tape<T>& tp, Var o) {
    const auto& xv = tp.value(input);
    const auto& gam = tp.value(gamma);
    auto g = tp.grad(o);
    std::vector<T> sum_g(channels, T{0}), sum_gx(channels, T{0});
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t j = i * channels + c;
        sum_g[c] += g[j];
        sum_gx[c] += g[j] * (xv[j] - mean[c]) * invstd[c];
      }
    if (tp.needs_grad(gamma)) detail::accumulate<T>(tp.grad(gamma), sum_gx);
    if (tp.needs_grad(beta)) detail::accumulate<T>(tp.grad(beta), sum_g);
    if (tp.needs_grad(input)) {
      auto dx = tp.grad(input);
      const T n = static_cast<T>(count);
      for (std::size_t i = 0; i < count; ++i)
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t j = i * channels + c;
          if (train) {
            const T xhat = (xv[j] - mean[c]) * invstd[c];
            dx[j] += gam[c] * invstd[c] * (g[j] - sum_g[c] / n - xhat * sum_gx[c] / n);
          } else {
            dx[j] += gam[c] * invstd[c] * g[j];
          }
        }
    }
  };
  return tape.record(std::move(out), tape.any_needs_grad(input, gamma, beta), backward,
                     "batch_norm1d");
}

}  // namespace detail

/// Per-channel normalization over (batch, time). Train mode normalizes with biased
/// batch statistics and updates `state`; eval mode uses the running statistics.
template <class T>
Var batch_norm1d(Tape<T>& tape, Var input, Var gamma, Var beta, BatchNormState<T>& state,
                 Mode mode, T momentum = T(0.9), T eps = T(1e-5)) {
  return detail::batch_norm_impl(tape, input, gamma, beta, state, &state, mode, momentum, eps);
}

/// Read-only statistics: eval mode only.
template <class T>
Var batch_norm1d(Tape<T>& tape, Var input, Var gamma, Var beta,
                 const BatchNormState<T>& state, Mode mode, T momentum = T(0.9),
                 T eps = T(1e-5)) {
  return detail::batch_norm_impl(tape, input, gamma, beta, state,
                                 static_cast<BatchNormState<T>*>(nullptr), mode, momentum, eps);
}

template <class T>
Var relu(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T{0} ? x[i] : T{0};
  return tape.record(
      std::move(out), tape.any_needs_grad(input),
      [input](Tape<T>& tp, Var o) {
        const auto& xv = tp.value(input);
        auto g = tp.grad(o);
        auto dx = tp.grad(input);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] > T{0}) dx[i] += g[i];
      },
      "relu");
}

/// Inverted dropout. Eval mode and rate 0 return the input unchanged.
template <class T>
Var dropout(Tape<T>& tape, Var input, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::kEval || rate == 0.0) return input;
  const auto& x = tape.value(input);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::bernoulli_distribution drop(rate);
  std::vector<T> mask(x.size());
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = drop(rng) ? T{0} : keep_scale;
    out[i] = x[i] * mask[i];
  }
  return tape.record(
      std::move(out), tape.any_needs_grad(input),
      [input, mask = std::move(mask)](Tape<T>& tp, Var o) {
        auto g = tp.grad(o);
        auto dx = tp.grad(input);
        for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
      },
      "dropout");
}

template <class T>
Var pool1d(Tape<T>& tape, Var input, std::size_t window, std::size_t stride, PoolKind kind) {
  const auto& x = tape.value(input);
  detail::require_rank(x.shape(), 3, "pool1d");
  detail::require(stride >= 1, "pool1d: stride must be >= 1");
  const std::size_t batch = x.dim(0), len = x.dim(1), channels = x.dim(2);
  detail::require(window >= 1 && window <= len, "pool1d: window " + std::to_string(window) +
                                                    " exceeds input length " +
                                                    std::to_string(len));
  const std::size_t out_len = sweep_length(len, window, stride);
  Tensor<T> out(Shape{batch, out_len, channels});
  std::vector<std::uint32_t> argmax(kind == PoolKind::kMax ? out.size() : 0);
  const T inv_window = T{1} / static_cast<T>(window);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t base = (b * len + t * stride) * channels + c;
        const std::size_t oi = (b * out_len + t) * channels + c;
        if (kind == PoolKind::kMax) {
          std::size_t best = base;
          for (std::size_t j = 1; j < window; ++j) {
            const std::size_t idx = base + j * channels;
            if (x[idx] > x[best]) best = idx;
          }
          out[oi] = x[best];
          argmax[oi] = static_cast<std::uint32_t>(best);
        } else {
          T acc{0};
          for (std::size_t j = 0; j < window; ++j) acc += x[base + j * channels];
          out[oi] = acc * inv_window;
        }
      }
  auto backward = [=, argmax = std::move(argmax)](Tape<T>& tp, Var o) {
    auto g = tp.grad(o);
    auto dx = tp.grad(input);
    if (kind == PoolKind::kMax) {
      for (std::size_t i = 0; i < g.size(); ++i) dx[argmax[i]] += g[i];
      return;
    }
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < out_len; ++t)
        for (std::size_t c = 0; c < channels; ++c) {
          const T gi = g[(b * out_len + t) * channels + c] * inv_window;
          const std::size_t base = (b * len + t * stride) * channels + c;
          for (std::size_t j = 0; j < window; ++j) dx[base + j * channels] += gi;
        }
  };
  return tape.record(std::move(out), tape.any_needs_grad(input), backward, "pool1d");
}

/// Mean over the time axis: (B,L,C) -> (B,C).
template <class T>
Var global_avg_pool(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  detail::require_rank(x.shape(), 3, "global_avg_pool");
  const std::size_t batch = x.dim(0), len = x.dim(1), channels = x.dim(2);
  Tensor<T> out(Shape{batch, channels});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < len; ++t)
      for (std::size_t c = 0; c < channels; ++c) out.at(b, c) += x.at(b, t, c);
  const T inv_len = T{1} / static_cast<T>(len);
  for (T& v : out.data()) v *= inv_len;
  return tape.record(
      std::move(out), tape.any_needs_grad(input),
      [=](Tape<T>& tp, Var o) {
        auto g = tp.grad(o);
        auto dx = tp.grad(input);
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < len; ++t)
            for (std::size_t c = 0; c < channels; ++c)
              dx[(b * len + t) * channels + c] += g[b * channels + c] * inv_len;
      },
      "global_avg_pool");
}

/// (B,C) x (C,K) + (K) -> (B,K).
template <class T>
Var dense_affine(Tape<T>& tape, Var input, Var weight, Var bias) {
  const auto& x = tape.value(input);
  const auto& w = tape.value(weight);
  detail::require_rank(x.shape(), 2, "dense_affine");
  detail::require_rank(w.shape(), 2, "dense_affine weight");
  const std::size_t batch = x.dim(0), in = x.dim(1), classes = w.dim(1);
  detail::require(w.dim(0) == in, "dense_affine: input " + x.shape().str() +
                                      " incompatible with weight " + w.shape().str());
  detail::require(tape.shape(bias) == Shape{classes},
                  "dense_affine: bias shape " + tape.shape(bias).str() +
                      " does not match weight " + w.shape().str());
  Tensor<T> out(Shape{batch, classes});
  detail::MatMap<T> om(out.data().data(), batch, classes);
  om.noalias() = detail::ConstMatMap<T>(x.data().data(), batch, in) *
                 detail::ConstMatMap<T>(w.data().data(), in, classes);
  const auto& bv = tape.value(bias);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < classes; ++k) om(b, k) += bv[k];
  return tape.record(
      std::move(out), tape.any_needs_grad(input, weight, bias),
      [=](Tape<T>& tp, Var o) {
        const auto gm = detail::ConstMatMap<T>(tp.grad(o).data(), batch, classes);
        if (tp.needs_grad(input)) {
          detail::MatMap<T> dx(tp.grad(input).data(), batch, in);
          dx.noalias() +=
              gm * detail::ConstMatMap<T>(tp.value(weight).data().data(), in, classes).transpose();
        }
        if (tp.needs_grad(weight)) {
          detail::MatMap<T> dw(tp.grad(weight).data(), in, classes);
          dw.noalias() +=
              detail::ConstMatMap<T>(tp.value(input).data().data(), batch, in).transpose() * gm;
        }
        if (tp.needs_grad(bias)) {
          auto db = tp.grad(bias);
          for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t k = 0; k < classes; ++k) db[k] += gm(b, k);
        }
      },
      "dense_affine");
}

/// Row-wise softmax over (B,K), max-shifted.
template <class T>
Var softmax(Tape<T>& tape, Var input) {
  const auto& x = tape.value(input);
  detail::require_rank(x.shape(), 2, "softmax");
  const std::size_t batch = x.dim(0), classes = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    T peak = x.at(b, 0);
    for (std::size_t k = 1; k < classes; ++k) peak = std::max(peak, x.at(b, k));
    T total{0};
    for (std::size_t k = 0; k < classes; ++k) total += out.at(b, k) = std::exp(x.at(b, k) - peak);
    for (std::size_t k = 0; k < classes; ++k) out.at(b, k) /= total;
  }
  return tape.record(
      std::move(out), tape.any_needs_grad(input),
      [=](Tape<T>& tp, Var o) {
        const auto& p = tp.value(o);
        auto g = tp.grad(o);
        auto dx = tp.grad(input);
        for (std::size_t b = 0; b < batch; ++b) {
          T dot{0};
          for (std::size_t k = 0; k < classes; ++k) dot += g[b * classes + k] * p.at(b, k);
          for (std::size_t k = 0; k < classes; ++k)
            dx[b * classes + k] += p.at(b, k) * (g[b * classes + k] - dot);
        }
      },
      "softmax");
}

/// Concatenates (B,T,C_i) tensors along the channel axis.
template <class T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_channels: nothing to concatenate");
  const Shape first = tape.shape(parts.front());
  detail::require_rank(first, 3, "concat_channels");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (Var p : parts) {
    const Shape& s = tape.shape(p);
    detail::require(s.rank() == 3 && s[0] == first[0] && s[1] == first[1],
                    "concat_channels: " + s.str() + " does not align with " + first.str());
    widths.push_back(s[2]);
    total += s[2];
  }
  const std::size_t rows = first[0] * first[1];
  Tensor<T> out(Shape{first[0], first[1], total});
  bool needs = false;
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& src = tape.value(parts[p]);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(src.data().data() + r * widths[p], widths[p],
                  out.data().data() + r * total + offset);
    offset += widths[p];
    needs = needs || tape.any_needs_grad(parts[p]);
  }
  return tape.record(
      std::move(out), needs,
      [=](Tape<T>& tp, Var o) {
        auto g = tp.grad(o);
        std::size_t off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
          if (tp.needs_grad(parts[p])) {
            auto dx = tp.grad(parts[p]);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t c = 0; c < widths[p]; ++c)
                dx[r * widths[p] + c] += g[r * total + off + c];
          }
          off += widths[p];
        }
      },
      "concat_channels");
}

}  // namespace decg
