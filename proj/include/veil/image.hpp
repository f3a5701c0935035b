#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "veil/common.hpp"
#include "veil/tensor.hpp"

namespace veil {

/// Interleaved 8-bit image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<uint8_t> px;

  ImageU8() = default;
  ImageU8(int w, int h, int c, uint8_t fill = 0)
      : width(w), height(h), channels(c),
        px(static_cast<size_t>(w) * h * c, fill) {}

  uint8_t& at(int x, int y, int c = 0) {
    return px[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int x, int y, int c = 0) const {
    return px[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
};

/// Single-channel float image.
struct ImageF {
  int width = 0;
  int height = 0;
  std::vector<float> px;

  ImageF() = default;
  ImageF(int w, int h, float fill = 0.f)
      : width(w), height(h), px(static_cast<size_t>(w) * h, fill) {}

  float& at(int x, int y) { return px[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const {
    return px[static_cast<size_t>(y) * width + x];
  }
};

/// BT.601 luma, integer-exact rounding to nearest:
///   y = round(0.299 R + 0.587 G + 0.114 B)
inline ImageU8 to_grayscale(const ImageU8& rgb) {
  if (rgb.channels == 1) return rgb;
  if (rgb.channels != 3) throw Error("to_grayscale: expected 1 or 3 channels");
  ImageU8 out(rgb.width, rgb.height, 1);
  const size_t n = static_cast<size_t>(rgb.width) * rgb.height;
  const uint8_t* p = rgb.px.data();
  uint8_t* q = out.px.data();
  for (size_t i = 0; i < n; ++i) {
    const uint32_t r = p[3 * i], g = p[3 * i + 1], b = p[3 * i + 2];
    q[i] = static_cast<uint8_t>((299u * r + 587u * g + 114u * b + 500u) / 1000u);
  }
  return out;
}

/// Bilinear resample with corner alignment: source coordinate of output
/// index i is i * (in-1)/(out-1), so corners map onto corners exactly.
inline ImageF resize_bilinear(const ImageF& in, int out_w, int out_h) {
  if (in.width < 1 || in.height < 1 || out_w < 1 || out_h < 1) {
    throw Error("resize_bilinear: zero-dimension image");
  }
  ImageF out(out_w, out_h);
  // Multiply before dividing so corner outputs land on integer source
  // coordinates exactly; the incremental a + w*(b-a) form keeps constant
  // regions and aligned corners bit-exact.
  auto src_coord = [](int i, int in_dim, int out_dim) {
    return out_dim > 1
               ? static_cast<double>(i) * (in_dim - 1) / (out_dim - 1)
               : 0.0;
  };
  for (int y = 0; y < out_h; ++y) {
    const double fy = src_coord(y, in.height, out_h);
    const int y0 = std::min(static_cast<int>(fy), in.height - 1);
    const int y1 = std::min(y0 + 1, in.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < out_w; ++x) {
      const double fx = src_coord(x, in.width, out_w);
      const int x0 = std::min(static_cast<int>(fx), in.width - 1);
      const int x1 = std::min(x0 + 1, in.width - 1);
      const float wx = static_cast<float>(fx - x0);
      const float a = in.at(x0, y0), b = in.at(x1, y0);
      const float c = in.at(x0, y1), d = in.at(x1, y1);
      const float top = a + wx * (b - a);
      const float bot = c + wx * (d - c);
      out.at(x, y) = top + wy * (bot - top);
    }
  }
  return out;
}

/// Divide by 255 into [0, 1].
inline ImageF to_float01(const ImageU8& gray) {
  if (gray.channels != 1) throw Error("to_float01: expected grayscale");
  ImageF out(gray.width, gray.height);
  for (size_t i = 0; i < gray.px.size(); ++i) {
    out.px[i] = static_cast<float>(gray.px[i]) * (1.f / 255.f);
  }
  return out;
}

/// Normalization + direct resize to the model's spatial resolution (aspect
/// distortion permitted).
inline ImageF normalize_resize(const ImageU8& gray, int out_w = 64,
                               int out_h = 64) {
  if (gray.width < 1 || gray.height < 1) {
    throw Error("normalize_resize: zero-dimension input");
  }
  return resize_bilinear(to_float01(gray), out_w, out_h);
}

/// Filled disc, clipped to the canvas.
inline void draw_disc(ImageU8& img, int cx, int cy, int radius, uint8_t v) {
  const int r2 = radius * radius;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy > r2) continue;
      const int x = cx + dx, y = cy + dy;
      if (img.in_bounds(x, y)) {
        for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = v;
      }
    }
  }
}

/// Enumerates the 8-connected Bresenham line from (x0,y0) to (x1,y1).
template <typename Fn>
void bresenham(int x0, int y0, int x1, int y1, Fn&& visit) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  int x = x0, y = y0;
  while (true) {
    visit(x, y);
    if (x == x1 && y == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
}

/// Thick line segment: the union of discs of radius floor(thickness/2)
/// stamped on every Bresenham pixel of the segment. Clipped to the canvas.
inline void draw_line_thick(ImageU8& img, int x0, int y0, int x1, int y1,
                            int thickness, uint8_t v) {
  const int r = std::max(0, thickness / 2);
  bresenham(x0, y0, x1, y1, [&](int x, int y) {
    if (r == 0) {
      if (img.in_bounds(x, y)) {
        for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = v;
      }
    } else {
      draw_disc(img, x, y, r, v);
    }
  });
}

/// Axis-aligned filled rectangle [x0,x1) x [y0,y1), clipped.
inline void fill_rect(ImageU8& img, int x0, int y0, int x1, int y1,
                      uint8_t v) {
  x0 = std::max(0, x0);
  y0 = std::max(0, y0);
  x1 = std::min(img.width, x1);
  y1 = std::min(img.height, y1);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = v;
    }
  }
}

/// Filled convex polygon via scanline; vertices in order. Clipped.
inline void fill_convex_poly(ImageU8& img, const std::vector<float>& xs,
                             const std::vector<float>& ys, uint8_t v) {
  if (xs.size() < 3 || xs.size() != ys.size()) return;
  const int y_min =
      std::max(0, static_cast<int>(std::floor(
                      *std::min_element(ys.begin(), ys.end()))));
  const int y_max =
      std::min(img.height - 1,
               static_cast<int>(std::ceil(
                   *std::max_element(ys.begin(), ys.end()))));
  const size_t n = xs.size();
  for (int y = y_min; y <= y_max; ++y) {
    const float fy = static_cast<float>(y) + 0.5f;
    float lo = 1e30f, hi = -1e30f;
    for (size_t i = 0; i < n; ++i) {
      const size_t j = (i + 1) % n;
      const float y0 = ys[i], y1 = ys[j];
      if ((fy >= y0 && fy < y1) || (fy >= y1 && fy < y0)) {
        const float t = (fy - y0) / (y1 - y0);
        const float x = xs[i] + t * (xs[j] - xs[i]);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
    }
    if (lo > hi) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(lo)));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(hi)));
    for (int x = x0; x <= x1; ++x) {
      for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = v;
    }
  }
}

}  // namespace veil
