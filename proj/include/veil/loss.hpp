#pragma once

#include <cmath>

#include "veil/common.hpp"
#include "veil/tensor.hpp"

namespace veil {

/// Mean squared reconstruction error over a window:
///   loss = (1/N) * sum over all elements of (I - O)^2
/// where N is the total number of pixels in the window (75*64*64 = 307,200
/// for the standard window geometry). Accumulated in double precision with a
/// fixed summation order.
template <typename T>
double window_mse(const Tensor4<T>& input, const Tensor4<T>& recon) {
  if (input.shape != recon.shape) {
    throw ShapeError("window_mse: shape mismatch " + input.shape.str() +
                     " vs " + recon.shape.str());
  }
  const int64_t n = input.numel();
  if (n == 0) throw ShapeError("window_mse: empty tensors");
  const T* a = input.data.data();
  const T* b = recon.data.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  const double loss = acc / static_cast<double>(n);
  if (!std::isfinite(loss)) throw Error("window_mse: non-finite loss");
  return loss;
}

/// d(loss)/d(recon) = 2*(O - I)/N, optionally scaled (e.g. 1/batch for a
/// batch-mean objective).
template <typename T>
Tensor4<T> window_mse_grad(const Tensor4<T>& input, const Tensor4<T>& recon,
                           double scale = 1.0) {
  if (input.shape != recon.shape) {
    throw ShapeError("window_mse_grad: shape mismatch " + input.shape.str() +
                     " vs " + recon.shape.str());
  }
  const int64_t n = input.numel();
  Tensor4<T> g(input.shape);
  const T* a = input.data.data();
  const T* b = recon.data.data();
  T* out = g.data.data();
  const T k = static_cast<T>(2.0 * scale / static_cast<double>(n));
  for (int64_t i = 0; i < n; ++i) out[i] = k * (b[i] - a[i]);
  return g;
}

}  // namespace veil
