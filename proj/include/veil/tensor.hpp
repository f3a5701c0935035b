#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "veil/common.hpp"

namespace veil {

/// Logical shape of a 4-D tensor, ordered (channels, time, height, width).
struct Shape4 {
  int c = 0;
  int t = 0;
  int h = 0;
  int w = 0;

  int64_t numel() const {
    return static_cast<int64_t>(c) * t * h * w;
  }
  bool operator==(const Shape4& o) const {
    return c == o.c && t == o.t && h == o.h && w == o.w;
  }
  bool operator!=(const Shape4& o) const { return !(*this == o); }

  std::string str() const {
    return detail::format_msg("(%d,%d,%d,%d)", c, t, h, w);
  }
};

/// Dense row-major 4-D tensor over (c, t, h, w).
template <typename T>
struct Tensor4 {
  Shape4 shape{};
  std::vector<T> data;

  Tensor4() = default;
  explicit Tensor4(Shape4 s, T fill = T(0))
      : shape(s), data(static_cast<size_t>(s.numel()), fill) {}

  int64_t numel() const { return shape.numel(); }

  int64_t index(int c, int t, int h, int w) const {
    return ((static_cast<int64_t>(c) * shape.t + t) * shape.h + h) * shape.w +
           w;
  }
  T& at(int c, int t, int h, int w) { return data[index(c, t, h, w)]; }
  T at(int c, int t, int h, int w) const { return data[index(c, t, h, w)]; }

  /// Pointer to the contiguous row (c, t, h, 0..w).
  T* row(int c, int t, int h) { return data.data() + index(c, t, h, 0); }
  const T* row(int c, int t, int h) const {
    return data.data() + index(c, t, h, 0);
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (const T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

template <typename T>
using Batch = std::vector<Tensor4<T>>;

/// Rejects tensors containing NaN/Inf; `what` names the offending input.
template <typename T>
void require_finite(const Tensor4<T>& x, const char* what) {
  if (!x.all_finite()) {
    throw Error(std::string(what) + ": non-finite values in tensor " +
                x.shape.str());
  }
}

template <typename T>
void require_shape(const Tensor4<T>& x, const Shape4& want, const char* what) {
  if (x.shape != want) {
    throw ShapeError(std::string(what) + ": expected " + want.str() +
                     ", got " + x.shape.str());
  }
}

}  // namespace veil
