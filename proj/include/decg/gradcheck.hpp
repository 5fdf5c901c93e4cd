#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "decg/tensor.hpp"

namespace decg {

/// Central-difference gradient of a scalar function, one coordinate at a time.
/// Only evaluates `f`; never touches a tape.
template <class T, class F>
Tensor<T> finite_diff_gradient(F&& f, const Tensor<T>& x, T h) {
  if (!(h > T{0})) throw std::invalid_argument("finite_diff_gradient: h must be positive");
  Tensor<T> probe = x;
  Tensor<T> grad(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T up = static_cast<T>(f(probe));
    probe[i] = orig - h;
    const T down = static_cast<T>(f(probe));
    probe[i] = orig;
    grad[i] = (up - down) / (T{2} * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
template <class T>
T max_relative_error(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: size mismatch");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T scale = std::max({T{1}, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace decg
