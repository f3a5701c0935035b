#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "veil/common.hpp"
#include "veil/tensor.hpp"

namespace veil {

/// Per-axis extents for kernels, strides, paddings, ordered (t, h, w).
struct Dims3 {
  int t = 1;
  int h = 1;
  int w = 1;

  bool operator==(const Dims3& o) const {
    return t == o.t && h == o.h && w == o.w;
  }
  std::string str() const { return detail::format_msg("(%d,%d,%d)", t, h, w); }
};

/// Geometry of a (transposed) convolution.
struct ConvSpec {
  int in_c = 0;
  int out_c = 0;
  Dims3 kernel{3, 3, 3};
  Dims3 stride{1, 1, 1};
  Dims3 pad{0, 0, 0};
  Dims3 out_pad{0, 0, 0};  // transposed conv only

  int64_t kernel_volume() const {
    return static_cast<int64_t>(kernel.t) * kernel.h * kernel.w;
  }
  /// Input connections per output unit; scales the init distribution.
  int64_t fan_in() const { return in_c * kernel_volume(); }
};

inline void validate_conv_spec(const ConvSpec& s, bool transposed,
                               const std::string& who) {
  auto bad = [&](const char* msg) {
    throw ConfigError(who + ": " + msg + " (kernel=" + s.kernel.str() +
                      " stride=" + s.stride.str() + " pad=" + s.pad.str() +
                      " out_pad=" + s.out_pad.str() + ")");
  };
  if (s.in_c < 1 || s.out_c < 1) bad("channel counts must be positive");
  const int ks[] = {s.kernel.t, s.kernel.h, s.kernel.w};
  const int st[] = {s.stride.t, s.stride.h, s.stride.w};
  const int pd[] = {s.pad.t, s.pad.h, s.pad.w};
  const int op[] = {s.out_pad.t, s.out_pad.h, s.out_pad.w};
  for (int i = 0; i < 3; ++i) {
    if (ks[i] < 1) bad("kernel extents must be positive");
    if (st[i] < 1) bad("stride extents must be positive");
    if (pd[i] < 0) bad("padding must be non-negative");
    if (op[i] < 0) bad("output_padding must be non-negative");
    if (!transposed && op[i] != 0) bad("output_padding requires transposed");
    if (transposed && op[i] >= st[i])
      bad("output_padding must be strictly less than stride");
  }
}

/// floor((in + 2p - k) / s) + 1
inline int conv_out_extent(int in, int k, int s, int p) {
  return (in + 2 * p - k) / s + 1;
}

/// (in - 1) * s - 2p + k + out_pad
inline int deconv_out_extent(int in, int k, int s, int p, int op) {
  return (in - 1) * s - 2 * p + k + op;
}

/// A trainable tensor together with its gradient and Adam moments.
template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> m;  // Adam first moment
  std::vector<T> v;  // Adam second moment

  void resize(size_t n) {
    value.assign(n, T(0));
    grad.assign(n, T(0));
    m.assign(n, T(0));
    v.assign(n, T(0));
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

enum class Mode { train, eval };

/// Base interface for all layers. Batches are passed by value and moved
/// through the stack; forward() in train mode records whatever backward()
/// needs, and backward() before any train-mode forward is an error.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const std::string& name() const = 0;
  virtual std::string kind() const = 0;
  virtual Shape4 output_shape(const Shape4& in) const = 0;
  virtual Batch<T> forward(Batch<T> x, Mode mode) = 0;
  virtual Batch<T> backward(const Batch<T>& gy) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }
  virtual void clear_cache() {}
};

namespace detail {

template <typename T>
void check_batch(const Batch<T>& x, const std::string& who) {
  if (x.empty()) throw Error(who + ": empty batch");
  for (size_t i = 1; i < x.size(); ++i) {
    if (x[i].shape != x[0].shape) {
      throw ShapeError(who + ": inconsistent batch shapes " +
                       x[0].shape.str() + " vs " + x[i].shape.str());
    }
  }
}

template <typename T>
void check_batch_finite(const Batch<T>& x, const std::string& who) {
  for (const auto& t : x) require_finite(t, who.c_str());
}

/// n zero-filled tensors without copying a prototype.
template <typename T>
Batch<T> make_batch(int n, const Shape4& shape) {
  Batch<T> b;
  b.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) b.emplace_back(shape);
  return b;
}

// ---------------------------------------------------------------------------
// Row kernels. The 3-tap stride-1 stencils carry nearly all of the model
// FLOPs, so they are written as single fused passes over each row; the
// generic forms cover every other geometry (arbitrary kernels and strides in
// the gradient-check sweeps).
// ---------------------------------------------------------------------------

// y[x] += sum_k w[k] * a[x + k] for x in [0, n): the caller aligns `a` so
// tap k reads a[x + k], all in bounds.
template <typename T>
inline void row_stencil3(T* __restrict y, const T* __restrict a, const T* w,
                         int n) {
  const T w0 = w[0], w1 = w[1], w2 = w[2];
  for (int x = 0; x < n; ++x) {
    y[x] += w0 * a[x] + w1 * a[x + 1] + w2 * a[x + 2];
  }
}

// d[k] += sum_x g[x] * a[x + k] for the three taps in one pass.
template <typename T>
inline void row_dots3(const T* __restrict g, const T* __restrict a, int n,
                      T* __restrict d) {
  T d0 = 0, d1 = 0, d2 = 0;
  for (int x = 0; x < n; ++x) {
    d0 += g[x] * a[x];
    d1 += g[x] * a[x + 1];
    d2 += g[x] * a[x + 2];
  }
  d[0] += d0;
  d[1] += d1;
  d[2] += d2;
}

// Fused 3x3 spatial tap pass: y[x] += sum_{j,k} w[j*3+k] * a_j[x + k].
template <typename T>
inline void row_stencil3x3(T* __restrict y, const T* __restrict a0,
                           const T* __restrict a1, const T* __restrict a2,
                           const T* w, int n) {
  const T w00 = w[0], w01 = w[1], w02 = w[2];
  const T w10 = w[3], w11 = w[4], w12 = w[5];
  const T w20 = w[6], w21 = w[7], w22 = w[8];
  for (int x = 0; x < n; ++x) {
    y[x] += w00 * a0[x] + w01 * a0[x + 1] + w02 * a0[x + 2] +
            w10 * a1[x] + w11 * a1[x + 1] + w12 * a1[x + 2] +
            w20 * a2[x] + w21 * a2[x + 1] + w22 * a2[x + 2];
  }
}

// Fused 3x3 weight-gradient pass: d[j*3+k] += sum_x g[x] * a_j[x + k].
template <typename T>
inline void row_dots3x3(const T* __restrict g, const T* __restrict a0,
                        const T* __restrict a1, const T* __restrict a2, int n,
                        T* __restrict d) {
  T d00 = 0, d01 = 0, d02 = 0, d10 = 0, d11 = 0, d12 = 0, d20 = 0, d21 = 0,
    d22 = 0;
  for (int x = 0; x < n; ++x) {
    const T gx = g[x];
    d00 += gx * a0[x];
    d01 += gx * a0[x + 1];
    d02 += gx * a0[x + 2];
    d10 += gx * a1[x];
    d11 += gx * a1[x + 1];
    d12 += gx * a1[x + 2];
    d20 += gx * a2[x];
    d21 += gx * a2[x + 1];
    d22 += gx * a2[x + 2];
  }
  d[0] += d00;
  d[1] += d01;
  d[2] += d02;
  d[3] += d10;
  d[4] += d11;
  d[5] += d12;
  d[6] += d20;
  d[7] += d21;
  d[8] += d22;
}

// Stride-2 transposed-convolution row for kernel width 3, padding 1 and
// output width 2*in_n (output_padding 1): even outputs take the center tap,
// odd outputs blend the outer taps.
template <typename T>
inline void row_deconv_s2p1k3(T* __restrict y, const T* __restrict in,
                              int in_n, const T* w) {
  const T w0 = w[0], w1 = w[1], w2 = w[2];
  const int last = in_n - 1;
  for (int m = 0; m < last; ++m) {
    y[2 * m] += w1 * in[m];
    y[2 * m + 1] += w2 * in[m] + w0 * in[m + 1];
  }
  y[2 * last] += w1 * in[last];
  y[2 * last + 1] += w2 * in[last];
}

// Gradient row through a stride-2 k3 p1 transposed convolution:
// gin[xi] += w0*g[2xi-1] + w1*g[2xi] + w2*g[2xi+1], with gn == 2*in_n.
template <typename T>
inline void row_deconv_s2p1k3_grad(T* __restrict y, const T* __restrict g,
                                   int in_n, const T* w) {
  const T w0 = w[0], w1 = w[1], w2 = w[2];
  y[0] += w1 * g[0] + w2 * g[1];
  for (int xi = 1; xi < in_n; ++xi) {
    y[xi] += w0 * g[2 * xi - 1] + w1 * g[2 * xi] + w2 * g[2 * xi + 1];
  }
}

// Generic correlation row: y[x] += sum_k w[k] * in[x*s + k - p] (valid taps).
template <typename T>
inline void row_corr_generic(T* __restrict y, int yn, const T* __restrict in,
                             int in_n, const T* w, int kn, int s, int p) {
  for (int k = 0; k < kn; ++k) {
    const T wv = w[k];
    if (s == 1) {
      const int off = k - p;  // xi = x + off
      const int x0 = std::max(0, -off);
      const int x1 = std::min(yn, in_n - off);
      const T* a = in + off;
      for (int x = x0; x < x1; ++x) y[x] += wv * a[x];
    } else {
      for (int x = 0; x < yn; ++x) {
        const int xi = x * s + k - p;
        if (xi >= 0 && xi < in_n) y[x] += wv * in[xi];
      }
    }
  }
}

// Generic weight-gradient row: d[k] += sum_x g[x] * in[x*s + k - p].
template <typename T>
inline void row_dots_generic(const T* __restrict g, int gn,
                             const T* __restrict in, int in_n, int kn, int s,
                             int p, T* __restrict d) {
  for (int k = 0; k < kn; ++k) {
    T acc = 0;
    if (s == 1) {
      const int off = k - p;
      const int x0 = std::max(0, -off);
      const int x1 = std::min(gn, in_n - off);
      const T* a = in + off;
      for (int x = x0; x < x1; ++x) acc += g[x] * a[x];
    } else {
      for (int x = 0; x < gn; ++x) {
        const int xi = x * s + k - p;
        if (xi >= 0 && xi < in_n) acc += g[x] * in[xi];
      }
    }
    d[k] += acc;
  }
}

// Transposed-convolution row in gather form:
// y[xo] += sum_k w[k] * in[(xo + p - k) / s] where the division is exact.
template <typename T>
inline void row_deconv_generic(T* __restrict y, int yn,
                               const T* __restrict in, int in_n, const T* w,
                               int kn, int s, int p) {
  if (s == 1) {
    // Same structure as a correlation with flipped tap order.
    for (int k = 0; k < kn; ++k) {
      const T wv = w[k];
      const int off = p - k;  // xi = xo + off
      const int x0 = std::max(0, -off);
      const int x1 = std::min(yn, in_n - off);
      const T* a = in + off;
      for (int x = x0; x < x1; ++x) y[x] += wv * a[x];
    }
    return;
  }
  for (int k = 0; k < kn; ++k) {
    const T wv = w[k];
    const int off = k - p;  // xo = xi * s + off
    const int lo = off < 0 ? (-off + s - 1) / s : 0;
    int hi = off > yn - 1 ? lo : std::min(in_n, (yn - 1 - off) / s + 1);
    for (int xi = lo; xi < hi; ++xi) y[xi * s + off] += wv * in[xi];
  }
}

// Weight gradient for the transposed convolution:
// d[k] += sum_xi in[xi] * g[xi*s + k - p] (valid positions).
template <typename T>
inline void row_deconv_dots_generic(const T* __restrict in, int in_n,
                                    const T* __restrict g, int gn, int kn,
                                    int s, int p, T* __restrict d) {
  for (int k = 0; k < kn; ++k) {
    const int off = k - p;
    const int lo = off < 0 ? (-off + s - 1) / s : 0;
    const int hi = off > gn - 1 ? lo : std::min(in_n, (gn - 1 - off) / s + 1);
    T acc = 0;
    if (s == 1) {
      const T* a = g + off;
      for (int xi = lo; xi < hi; ++xi) acc += in[xi] * a[xi];
    } else {
      for (int xi = lo; xi < hi; ++xi) acc += in[xi] * g[xi * s + off];
    }
    d[k] += acc;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 3-D convolution (cross-correlation), weights laid out (oc, ic, kt, kh, kw).
// ---------------------------------------------------------------------------

template <typename T>
class Conv3d : public Layer<T> {
 public:
  Conv3d(std::string name, const ConvSpec& spec)
      : name_(std::move(name)), spec_(spec) {
    validate_conv_spec(spec_, /*transposed=*/false, name_);
    weight_.name = name_ + ".weight";
    weight_.resize(static_cast<size_t>(spec_.out_c) * spec_.in_c *
                   spec_.kernel_volume());
    bias_.name = name_ + ".bias";
    bias_.resize(static_cast<size_t>(spec_.out_c));
  }

  const std::string& name() const override { return name_; }
  std::string kind() const override { return "conv"; }
  const ConvSpec& spec() const { return spec_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  /// He-style U(-b, b) with b = sqrt(6 / fan_in); bias zero.
  void init_params(Rng& rng) {
    const double b = std::sqrt(6.0 / static_cast<double>(spec_.fan_in()));
    for (auto& w : weight_.value) w = static_cast<T>(rng.next_uniform(-b, b));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
  }

  Shape4 output_shape(const Shape4& in) const override {
    if (in.c != spec_.in_c) {
      throw ShapeError(name_ + ": expected " + std::to_string(spec_.in_c) +
                       " input channels, got " + in.str());
    }
    const Shape4 out{spec_.out_c,
                     conv_out_extent(in.t, spec_.kernel.t, spec_.stride.t,
                                     spec_.pad.t),
                     conv_out_extent(in.h, spec_.kernel.h, spec_.stride.h,
                                     spec_.pad.h),
                     conv_out_extent(in.w, spec_.kernel.w, spec_.stride.w,
                                     spec_.pad.w)};
    if (out.t < 1 || out.h < 1 || out.w < 1) {
      throw ShapeError(name_ + ": input " + in.str() +
                       " too small for kernel " + spec_.kernel.str() +
                       " stride " + spec_.stride.str() + " pad " +
                       spec_.pad.str() + " -> output " + out.str());
    }
    return out;
  }

  Batch<T> forward(Batch<T> x, Mode mode) override {
    detail::check_batch(x, name_);
    detail::check_batch_finite(x, name_);
    const Shape4 in = x[0].shape;
    const Shape4 out = output_shape(in);
    const int nb = static_cast<int>(x.size());

    Batch<T> y = detail::make_batch<T>(nb, out);
    const T* wp = weight_.value.data();
    const Dims3 k = spec_.kernel, s = spec_.stride, p = spec_.pad;
    const bool unit_stride = s.t == 1 && s.h == 1 && s.w == 1;
    const bool stencil = unit_stride && k.w == 3 && out.w >= 2;
    const int64_t wrow_stride = static_cast<int64_t>(k.h) * k.w;

    parallel_for(static_cast<int64_t>(nb) * out.c * out.t,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / (out.c * out.t));
        const int oc = static_cast<int>((job / out.t) % out.c);
        const int to = static_cast<int>(job % out.t);
        const Tensor4<T>& xi = x[n];
        Tensor4<T>& yo = y[n];
        const int lo = std::min(out.w, std::max(0, p.w));
        const int hi_x = std::max(lo, std::min(out.w, in.w + p.w - 2));
        for (int ho = 0; ho < out.h; ++ho) {
          T* orow = yo.row(oc, to, ho);
          std::fill(orow, orow + out.w, bias_.value[oc]);
          const bool h_fused = stencil && k.h == 3 && ho - p.h >= 0 &&
                               ho - p.h + 2 < in.h;
          for (int ic = 0; ic < in.c; ++ic) {
            const T* wbase =
                wp + (static_cast<int64_t>(oc) * in.c + ic) * k.t * wrow_stride;
            for (int kt = 0; kt < k.t; ++kt) {
              const int ti = to * s.t + kt - p.t;
              if (ti < 0 || ti >= in.t) continue;
              if (h_fused) {
                // One pass applying all nine spatial taps.
                const T* a0 = xi.row(ic, ti, ho - p.h);
                const T* a1 = xi.row(ic, ti, ho - p.h + 1);
                const T* a2 = xi.row(ic, ti, ho - p.h + 2);
                const T* w9 = wbase + kt * wrow_stride;
                if (lo < hi_x) {
                  detail::row_stencil3x3(orow + lo, a0 + lo - p.w,
                                         a1 + lo - p.w, a2 + lo - p.w, w9,
                                         hi_x - lo);
                }
                auto edge = [&](int xo) {
                  T acc = orow[xo];
                  const T* rows[3] = {a0, a1, a2};
                  for (int kh = 0; kh < 3; ++kh) {
                    for (int kw = 0; kw < 3; ++kw) {
                      const int wi = xo + kw - p.w;
                      if (wi >= 0 && wi < in.w) {
                        acc += w9[kh * 3 + kw] * rows[kh][wi];
                      }
                    }
                  }
                  orow[xo] = acc;
                };
                for (int xo = 0; xo < lo; ++xo) edge(xo);
                for (int xo = hi_x; xo < out.w; ++xo) edge(xo);
                continue;
              }
              for (int kh = 0; kh < k.h; ++kh) {
                const int hi = ho * s.h + kh - p.h;
                if (hi < 0 || hi >= in.h) continue;
                const T* irow = xi.row(ic, ti, hi);
                const T* wrow = wbase + kt * wrow_stride + kh * k.w;
                if (stencil) {
                  if (lo < hi_x) {
                    detail::row_stencil3(orow + lo, irow + lo - p.w, wrow,
                                         hi_x - lo);
                  }
                  auto edge = [&](int xo) {
                    T acc = orow[xo];
                    for (int kw = 0; kw < 3; ++kw) {
                      const int wi = xo + kw - p.w;
                      if (wi >= 0 && wi < in.w) acc += wrow[kw] * irow[wi];
                    }
                    orow[xo] = acc;
                  };
                  for (int xo = 0; xo < lo; ++xo) edge(xo);
                  for (int xo = hi_x; xo < out.w; ++xo) edge(xo);
                } else {
                  detail::row_corr_generic(orow, out.w, irow, in.w, wrow,
                                           k.w, s.w, p.w);
                }
              }
            }
          }
        }
      }
    });

    if (mode == Mode::train) {
      cache_in_ = std::move(x);
      has_cache_ = true;
    }
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    if (!has_cache_) throw Error(name_ + ": backward before forward");
    const Batch<T>& x = cache_in_;
    const Shape4 in = x[0].shape;
    const Shape4 out = output_shape(in);
    const int nb = static_cast<int>(x.size());
    if (gy.size() != x.size()) throw ShapeError(name_ + ": batch mismatch");
    for (const auto& g : gy) require_shape(g, out, name_.c_str());

    const Dims3 k = spec_.kernel, s = spec_.stride, p = spec_.pad;
    const T* wp = weight_.value.data();
    const bool unit_stride = s.t == 1 && s.h == 1 && s.w == 1;
    const bool stencil = unit_stride && k.w == 3 && out.w >= 2;
    const int64_t wrow_stride = static_cast<int64_t>(k.h) * k.w;

    // Parameter gradients: each output channel owned by one worker.
    parallel_for(out.c, [&](int64_t cb, int64_t ce) {
      const int64_t per_oc = static_cast<int64_t>(in.c) * spec_.kernel_volume();
      std::vector<T> acc(static_cast<size_t>(per_oc));
      for (int64_t oc = cb; oc < ce; ++oc) {
        std::fill(acc.begin(), acc.end(), T(0));
        double bacc = 0.0;
        for (int n = 0; n < nb; ++n) {
          const Tensor4<T>& xi = x[n];
          const Tensor4<T>& gyn = gy[n];
          for (int to = 0; to < out.t; ++to) {
            for (int ho = 0; ho < out.h; ++ho) {
              const T* grow = gyn.row(static_cast<int>(oc), to, ho);
              {
                T rs = T(0);
                for (int xo = 0; xo < out.w; ++xo) rs += grow[xo];
                bacc += static_cast<double>(rs);
              }
              const int lo = std::min(out.w, std::max(0, p.w));
              const int hi_x =
                  std::max(lo, std::min(out.w, in.w + p.w - 2));
              const bool h_fused = stencil && k.h == 3 && ho - p.h >= 0 &&
                                   ho - p.h + 2 < in.h;
              for (int ic = 0; ic < in.c; ++ic) {
                T* arow_base =
                    acc.data() + static_cast<int64_t>(ic) * k.t * wrow_stride;
                for (int kt = 0; kt < k.t; ++kt) {
                  const int ti = to * s.t + kt - p.t;
                  if (ti < 0 || ti >= in.t) continue;
                  if (h_fused) {
                    const T* a0 = xi.row(ic, ti, ho - p.h);
                    const T* a1 = xi.row(ic, ti, ho - p.h + 1);
                    const T* a2 = xi.row(ic, ti, ho - p.h + 2);
                    T* a9 = arow_base + kt * wrow_stride;
                    if (lo < hi_x) {
                      detail::row_dots3x3(grow + lo, a0 + lo - p.w,
                                          a1 + lo - p.w, a2 + lo - p.w,
                                          hi_x - lo, a9);
                    }
                    auto edge = [&](int xo) {
                      const T* rows[3] = {a0, a1, a2};
                      for (int kh = 0; kh < 3; ++kh) {
                        for (int kw = 0; kw < 3; ++kw) {
                          const int wi = xo + kw - p.w;
                          if (wi >= 0 && wi < in.w) {
                            a9[kh * 3 + kw] += grow[xo] * rows[kh][wi];
                          }
                        }
                      }
                    };
                    for (int xo = 0; xo < lo; ++xo) edge(xo);
                    for (int xo = hi_x; xo < out.w; ++xo) edge(xo);
                    continue;
                  }
                  for (int kh = 0; kh < k.h; ++kh) {
                    const int hi = ho * s.h + kh - p.h;
                    if (hi < 0 || hi >= in.h) continue;
                    const T* irow = xi.row(ic, ti, hi);
                    T* arow = arow_base + kt * wrow_stride + kh * k.w;
                    if (stencil) {
                      if (lo < hi_x) {
                        detail::row_dots3(grow + lo, irow + lo - p.w,
                                          hi_x - lo, arow);
                      }
                      auto edge = [&](int xo) {
                        for (int kw = 0; kw < 3; ++kw) {
                          const int wi = xo + kw - p.w;
                          if (wi >= 0 && wi < in.w) {
                            arow[kw] += grow[xo] * irow[wi];
                          }
                        }
                      };
                      for (int xo = 0; xo < lo; ++xo) edge(xo);
                      for (int xo = hi_x; xo < out.w; ++xo) edge(xo);
                    } else {
                      detail::row_dots_generic(grow, out.w, irow, in.w, k.w,
                                               s.w, p.w, arow);
                    }
                  }
                }
              }
            }
          }
        }
        T* gw = weight_.grad.data() + oc * per_oc;
        for (int64_t i = 0; i < per_oc; ++i) gw[i] += acc[i];
        bias_.grad[static_cast<size_t>(oc)] += static_cast<T>(bacc);
      }
    });

    // Input gradient: a transposed correlation of gy with the kernel.
    Batch<T> gx = detail::make_batch<T>(nb, in);
    parallel_for(static_cast<int64_t>(nb) * in.c * in.t,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / (in.c * in.t));
        const int ic = static_cast<int>((job / in.t) % in.c);
        const int ti = static_cast<int>(job % in.t);
        const Tensor4<T>& gyn = gy[n];
        Tensor4<T>& gxn = gx[n];
        for (int hi = 0; hi < in.h; ++hi) {
          T* xrow = gxn.row(ic, ti, hi);
          for (int oc = 0; oc < out.c; ++oc) {
            const T* wbase =
                wp + (static_cast<int64_t>(oc) * in.c + ic) * k.t * wrow_stride;
            const int lo = std::min(in.w, std::max(0, 2 - p.w));
            const int hi_x = std::max(lo, std::min(in.w, out.w - p.w));
            const bool h_fused = stencil && k.h == 3 && hi + p.h - 2 >= 0 &&
                                 hi + p.h < out.h;
            for (int kt = 0; kt < k.t; ++kt) {
              const int tnum = ti + p.t - kt;
              if (unit_stride) {
                const int to = tnum;
                if (to < 0 || to >= out.t) continue;
                if (h_fused) {
                  // Rows ascending: a_j = gy row (hi + p.h - 2 + j), which
                  // pairs with kernel row (2 - j); taps flipped in kw too.
                  const T* a0 = gyn.row(oc, to, hi + p.h - 2);
                  const T* a1 = gyn.row(oc, to, hi + p.h - 1);
                  const T* a2 = gyn.row(oc, to, hi + p.h);
                  const T* w9 = wbase + kt * wrow_stride;
                  const T wf[9] = {w9[8], w9[7], w9[6], w9[5], w9[4],
                                   w9[3], w9[2], w9[1], w9[0]};
                  if (lo < hi_x) {
                    detail::row_stencil3x3(xrow + lo, a0 + lo - (2 - p.w),
                                           a1 + lo - (2 - p.w),
                                           a2 + lo - (2 - p.w), wf,
                                           hi_x - lo);
                  }
                  auto edge = [&](int xi) {
                    T acc = xrow[xi];
                    const T* rows[3] = {a2, a1, a0};  // kh = 0,1,2
                    for (int kh = 0; kh < 3; ++kh) {
                      for (int kw = 0; kw < 3; ++kw) {
                        const int xo = xi + p.w - kw;
                        if (xo >= 0 && xo < out.w) {
                          acc += w9[kh * 3 + kw] * rows[kh][xo];
                        }
                      }
                    }
                    xrow[xi] = acc;
                  };
                  for (int xi = 0; xi < lo; ++xi) edge(xi);
                  for (int xi = hi_x; xi < in.w; ++xi) edge(xi);
                  continue;
                }
                for (int kh = 0; kh < k.h; ++kh) {
                  const int ho = hi + p.h - kh;
                  if (ho < 0 || ho >= out.h) continue;
                  const T* grow = gyn.row(oc, to, ho);
                  const T* wrow = wbase + kt * wrow_stride + kh * k.w;
                  if (stencil) {
                    // gin[xi] += sum_kw wrow[kw] * gy[xi + p - kw]: a 3-tap
                    // stencil with the taps flipped.
                    const T wflip[3] = {wrow[2], wrow[1], wrow[0]};
                    if (lo < hi_x) {
                      detail::row_stencil3(xrow + lo, grow + lo - (2 - p.w),
                                           wflip, hi_x - lo);
                    }
                    auto edge = [&](int xi) {
                      T acc = xrow[xi];
                      for (int kw = 0; kw < 3; ++kw) {
                        const int xo = xi + p.w - kw;
                        if (xo >= 0 && xo < out.w) acc += wrow[kw] * grow[xo];
                      }
                      xrow[xi] = acc;
                    };
                    for (int xi = 0; xi < lo; ++xi) edge(xi);
                    for (int xi = hi_x; xi < in.w; ++xi) edge(xi);
                  } else {
                    // s == 1 generic kernel width.
                    for (int kw = 0; kw < k.w; ++kw) {
                      const int off = p.w - kw;
                      const int x0 = std::max(0, -off);
                      const int x1 = std::min(in.w, out.w - off);
                      const T wv = wrow[kw];
                      const T* gr = grow + off;
                      for (int xi = x0; xi < x1; ++xi) xrow[xi] += wv * gr[xi];
                    }
                  }
                }
              } else {
                if (tnum < 0 || tnum % s.t != 0) continue;
                const int to = tnum / s.t;
                if (to >= out.t) continue;
                for (int kh = 0; kh < k.h; ++kh) {
                  const int hnum = hi + p.h - kh;
                  if (hnum < 0 || hnum % s.h != 0) continue;
                  const int ho = hnum / s.h;
                  if (ho >= out.h) continue;
                  const T* grow = gyn.row(oc, to, ho);
                  const T* wrow = wbase + kt * wrow_stride + kh * k.w;
                  for (int kw = 0; kw < k.w; ++kw) {
                    const T wv = wrow[kw];
                    for (int xi = 0; xi < in.w; ++xi) {
                      const int wnum = xi + p.w - kw;
                      if (wnum < 0 || wnum % s.w != 0) continue;
                      const int xo = wnum / s.w;
                      if (xo < out.w) xrow[xi] += wv * grow[xo];
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void clear_cache() override {
    cache_in_.clear();
    has_cache_ = false;
  }

 private:
  std::string name_;
  ConvSpec spec_;
  Param<T> weight_, bias_;
  Batch<T> cache_in_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// 3-D transposed convolution, weights laid out (ic, oc, kt, kh, kw).
// Gather form: every output cell is accumulated in a fixed order regardless
// of the worker count.
// ---------------------------------------------------------------------------

template <typename T>
class ConvTranspose3d : public Layer<T> {
 public:
  ConvTranspose3d(std::string name, const ConvSpec& spec)
      : name_(std::move(name)), spec_(spec) {
    validate_conv_spec(spec_, /*transposed=*/true, name_);
    weight_.name = name_ + ".weight";
    weight_.resize(static_cast<size_t>(spec_.in_c) * spec_.out_c *
                   spec_.kernel_volume());
    bias_.name = name_ + ".bias";
    bias_.resize(static_cast<size_t>(spec_.out_c));
  }

  const std::string& name() const override { return name_; }
  std::string kind() const override { return "deconv"; }
  const ConvSpec& spec() const { return spec_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

  void init_params(Rng& rng) {
    const double b = std::sqrt(6.0 / static_cast<double>(spec_.fan_in()));
    for (auto& w : weight_.value) w = static_cast<T>(rng.next_uniform(-b, b));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
  }

  Shape4 output_shape(const Shape4& in) const override {
    if (in.c != spec_.in_c) {
      throw ShapeError(name_ + ": expected " + std::to_string(spec_.in_c) +
                       " input channels, got " + in.str());
    }
    const Shape4 out{spec_.out_c,
                     deconv_out_extent(in.t, spec_.kernel.t, spec_.stride.t,
                                       spec_.pad.t, spec_.out_pad.t),
                     deconv_out_extent(in.h, spec_.kernel.h, spec_.stride.h,
                                       spec_.pad.h, spec_.out_pad.h),
                     deconv_out_extent(in.w, spec_.kernel.w, spec_.stride.w,
                                       spec_.pad.w, spec_.out_pad.w)};
    if (out.t < 1 || out.h < 1 || out.w < 1) {
      throw ShapeError(name_ + ": input " + in.str() +
                       " yields empty output " + out.str());
    }
    return out;
  }

  Batch<T> forward(Batch<T> x, Mode mode) override {
    detail::check_batch(x, name_);
    detail::check_batch_finite(x, name_);
    const Shape4 in = x[0].shape;
    const Shape4 out = output_shape(in);
    const int nb = static_cast<int>(x.size());

    Batch<T> y = detail::make_batch<T>(nb, out);
    const T* wp = weight_.value.data();
    const Dims3 k = spec_.kernel, s = spec_.stride, p = spec_.pad;
    const bool unit_w = s.w == 1;
    const bool stencil = unit_w && k.w == 3 && out.w >= 2;
    const int64_t wrow_stride = static_cast<int64_t>(k.h) * k.w;

    parallel_for(static_cast<int64_t>(nb) * out.c * out.t,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / (out.c * out.t));
        const int oc = static_cast<int>((job / out.t) % out.c);
        const int to = static_cast<int>(job % out.t);
        const Tensor4<T>& xi = x[n];
        Tensor4<T>& yo = y[n];
        for (int ho = 0; ho < out.h; ++ho) {
          T* orow = yo.row(oc, to, ho);
          std::fill(orow, orow + out.w, bias_.value[oc]);
          const int lo = std::min(out.w, std::max(0, 2 - p.w));
          const int hi_x = std::max(lo, std::min(out.w, in.w - p.w));
          const bool h_fused = stencil && k.h == 3 && s.h == 1 &&
                               ho + p.h - 2 >= 0 && ho + p.h < in.h;
          const bool s2_row = s.w == 2 && k.w == 3 && p.w == 1 &&
                              out.w == 2 * in.w;
          for (int ic = 0; ic < in.c; ++ic) {
            const T* wbase =
                wp + (static_cast<int64_t>(ic) * out.c + oc) * k.t * wrow_stride;
            for (int kt = 0; kt < k.t; ++kt) {
              const int tnum = to + p.t - kt;
              if (tnum < 0 || tnum % s.t != 0) continue;
              const int ti = tnum / s.t;
              if (ti >= in.t) continue;
              if (h_fused) {
                // Ascending rows pair with the 180-degree flipped kernel.
                const T* a0 = xi.row(ic, ti, ho + p.h - 2);
                const T* a1 = xi.row(ic, ti, ho + p.h - 1);
                const T* a2 = xi.row(ic, ti, ho + p.h);
                const T* w9 = wbase + kt * wrow_stride;
                const T wf[9] = {w9[8], w9[7], w9[6], w9[5], w9[4],
                                 w9[3], w9[2], w9[1], w9[0]};
                if (lo < hi_x) {
                  detail::row_stencil3x3(orow + lo, a0 + lo - (2 - p.w),
                                         a1 + lo - (2 - p.w),
                                         a2 + lo - (2 - p.w), wf, hi_x - lo);
                }
                auto edge = [&](int xo) {
                  T acc = orow[xo];
                  const T* rows[3] = {a2, a1, a0};  // kh = 0,1,2
                  for (int kh = 0; kh < 3; ++kh) {
                    for (int kw = 0; kw < 3; ++kw) {
                      const int wi = xo + p.w - kw;
                      if (wi >= 0 && wi < in.w) {
                        acc += w9[kh * 3 + kw] * rows[kh][wi];
                      }
                    }
                  }
                  orow[xo] = acc;
                };
                for (int xo = 0; xo < lo; ++xo) edge(xo);
                for (int xo = hi_x; xo < out.w; ++xo) edge(xo);
                continue;
              }
              for (int kh = 0; kh < k.h; ++kh) {
                const int hnum = ho + p.h - kh;
                if (hnum < 0 || hnum % s.h != 0) continue;
                const int hi = hnum / s.h;
                if (hi >= in.h) continue;
                const T* irow = xi.row(ic, ti, hi);
                const T* wrow = wbase + kt * wrow_stride + kh * k.w;
                if (stencil) {
                  // out[xo] += sum_kw wrow[kw] * in[xo + p - kw]: flipped
                  // 3-tap stencil over the interior.
                  const T wflip[3] = {wrow[2], wrow[1], wrow[0]};
                  if (lo < hi_x) {
                    detail::row_stencil3(orow + lo, irow + lo - (2 - p.w),
                                         wflip, hi_x - lo);
                  }
                  auto edge = [&](int xo) {
                    T acc = orow[xo];
                    for (int kw = 0; kw < 3; ++kw) {
                      const int wi = xo + p.w - kw;
                      if (wi >= 0 && wi < in.w) acc += wrow[kw] * irow[wi];
                    }
                    orow[xo] = acc;
                  };
                  for (int xo = 0; xo < lo; ++xo) edge(xo);
                  for (int xo = hi_x; xo < out.w; ++xo) edge(xo);
                } else if (s2_row) {
                  detail::row_deconv_s2p1k3(orow, irow, in.w, wrow);
                } else {
                  detail::row_deconv_generic(orow, out.w, irow, in.w, wrow,
                                             k.w, s.w, p.w);
                }
              }
            }
          }
        }
      }
    });

    if (mode == Mode::train) {
      cache_in_ = std::move(x);
      has_cache_ = true;
    }
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    if (!has_cache_) throw Error(name_ + ": backward before forward");
    const Batch<T>& x = cache_in_;
    const Shape4 in = x[0].shape;
    const Shape4 out = output_shape(in);
    const int nb = static_cast<int>(x.size());
    if (gy.size() != x.size()) throw ShapeError(name_ + ": batch mismatch");
    for (const auto& g : gy) require_shape(g, out, name_.c_str());

    const Dims3 k = spec_.kernel, s = spec_.stride, p = spec_.pad;
    const T* wp = weight_.value.data();
    const int64_t wrow_stride = static_cast<int64_t>(k.h) * k.w;

    // Weight gradients: each input channel owned by one worker.
    parallel_for(in.c, [&](int64_t cb, int64_t ce) {
      const int64_t per_ic =
          static_cast<int64_t>(out.c) * spec_.kernel_volume();
      std::vector<T> acc(static_cast<size_t>(per_ic));
      for (int64_t ic = cb; ic < ce; ++ic) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (int n = 0; n < nb; ++n) {
          const Tensor4<T>& xi = x[n];
          const Tensor4<T>& gyn = gy[n];
          for (int ti = 0; ti < in.t; ++ti) {
            for (int hi = 0; hi < in.h; ++hi) {
              const T* irow = xi.row(static_cast<int>(ic), ti, hi);
              for (int oc = 0; oc < out.c; ++oc) {
                T* arow_base =
                    acc.data() + static_cast<int64_t>(oc) * k.t * wrow_stride;
                for (int kt = 0; kt < k.t; ++kt) {
                  const int to = ti * s.t + kt - p.t;
                  if (to < 0 || to >= out.t) continue;
                  for (int kh = 0; kh < k.h; ++kh) {
                    const int ho = hi * s.h + kh - p.h;
                    if (ho < 0 || ho >= out.h) continue;
                    const T* grow = gyn.row(oc, to, ho);
                    detail::row_deconv_dots_generic(
                        irow, in.w, grow, out.w, k.w, s.w, p.w,
                        arow_base + kt * wrow_stride + kh * k.w);
                  }
                }
              }
            }
          }
        }
        T* gw = weight_.grad.data() + ic * per_ic;
        for (int64_t i = 0; i < per_ic; ++i) gw[i] += acc[i];
      }
    });

    // Bias gradients: one output channel per worker.
    parallel_for(out.c, [&](int64_t cb, int64_t ce) {
      for (int64_t oc = cb; oc < ce; ++oc) {
        double acc = 0.0;
        for (int n = 0; n < nb; ++n) {
          for (int to = 0; to < out.t; ++to) {
            for (int ho = 0; ho < out.h; ++ho) {
              const T* grow = gy[n].row(static_cast<int>(oc), to, ho);
              T rs = T(0);
              for (int xo = 0; xo < out.w; ++xo) rs += grow[xo];
              acc += static_cast<double>(rs);
            }
          }
        }
        bias_.grad[static_cast<size_t>(oc)] += static_cast<T>(acc);
      }
    });

    // Input gradient: plain correlation of gy with the kernel.
    Batch<T> gx = detail::make_batch<T>(nb, in);
    const bool stencil_bwd = s.w == 1 && k.w == 3 && in.w >= 2;
    parallel_for(static_cast<int64_t>(nb) * in.c * in.t,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / (in.c * in.t));
        const int ic = static_cast<int>((job / in.t) % in.c);
        const int ti = static_cast<int>(job % in.t);
        const Tensor4<T>& gyn = gy[n];
        Tensor4<T>& gxn = gx[n];
        for (int hi = 0; hi < in.h; ++hi) {
          T* xrow = gxn.row(ic, ti, hi);
          for (int oc = 0; oc < out.c; ++oc) {
            const T* wbase =
                wp + (static_cast<int64_t>(ic) * out.c + oc) * k.t * wrow_stride;
            for (int kt = 0; kt < k.t; ++kt) {
              const int to = ti * s.t + kt - p.t;
              if (to < 0 || to >= out.t) continue;
              for (int kh = 0; kh < k.h; ++kh) {
                const int ho = hi * s.h + kh - p.h;
                if (ho < 0 || ho >= out.h) continue;
                const T* grow = gyn.row(oc, to, ho);
                const T* wrow = wbase + kt * wrow_stride + kh * k.w;
                if (stencil_bwd) {
                  // gin[xi] += sum_kw wrow[kw] * gy[xi + kw - p].
                  const int lo = std::min(in.w, std::max(0, p.w));
                  const int hi_x = std::max(lo, std::min(in.w, out.w + p.w - 2));
                  if (lo < hi_x) {
                    detail::row_stencil3(xrow + lo, grow + lo - p.w, wrow,
                                         hi_x - lo);
                  }
                  auto edge = [&](int xi) {
                    T acc = xrow[xi];
                    for (int kw = 0; kw < 3; ++kw) {
                      const int xo = xi * s.w + kw - p.w;
                      if (xo >= 0 && xo < out.w) acc += wrow[kw] * grow[xo];
                    }
                    xrow[xi] = acc;
                  };
                  for (int xi = 0; xi < lo; ++xi) edge(xi);
                  for (int xi = hi_x; xi < in.w; ++xi) edge(xi);
                } else if (s.w == 2 && k.w == 3 && p.w == 1 &&
                           out.w == 2 * in.w) {
                  detail::row_deconv_s2p1k3_grad(xrow, grow, in.w, wrow);
                } else {
                  for (int kw = 0; kw < k.w; ++kw) {
                    const T wv = wrow[kw];
                    const int off = kw - p.w;
                    const int lo =
                        off < 0 ? (-off + s.w - 1) / s.w : 0;
                    const int hi_x =
                        off > out.w - 1
                            ? lo
                            : std::min(in.w, (out.w - 1 - off) / s.w + 1);
                    if (s.w == 1) {
                      const T* gr = grow + off;
                      for (int xi = lo; xi < hi_x; ++xi)
                        xrow[xi] += wv * gr[xi];
                    } else {
                      for (int xi = lo; xi < hi_x; ++xi)
                        xrow[xi] += wv * grow[xi * s.w + off];
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  void clear_cache() override {
    cache_in_.clear();
    has_cache_ = false;
  }

 private:
  std::string name_;
  ConvSpec spec_;
  Param<T> weight_, bias_;
  Batch<T> cache_in_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Max pooling with stride equal to the pool extent (non-overlapping blocks).
// The argmax cache stores the block-local offset (pool volumes are small).
// ---------------------------------------------------------------------------

template <typename T>
class MaxPool3d : public Layer<T> {
 public:
  MaxPool3d(std::string name, Dims3 pool)
      : name_(std::move(name)), pool_(pool) {
    if (pool_.t < 1 || pool_.h < 1 || pool_.w < 1) {
      throw ConfigError(name_ + ": pool extents must be positive");
    }
    if (static_cast<int64_t>(pool_.t) * pool_.h * pool_.w > 255) {
      throw ConfigError(name_ + ": pool volume too large");
    }
  }

  const std::string& name() const override { return name_; }
  std::string kind() const override { return "maxpool"; }
  Dims3 pool() const { return pool_; }

  Shape4 output_shape(const Shape4& in) const override {
    if (in.t % pool_.t != 0 || in.h % pool_.h != 0 || in.w % pool_.w != 0) {
      throw ShapeError(name_ + ": input " + in.str() +
                       " not divisible by pool " + pool_.str());
    }
    return {in.c, in.t / pool_.t, in.h / pool_.h, in.w / pool_.w};
  }

  Batch<T> forward(Batch<T> x, Mode mode) override {
    detail::check_batch(x, name_);
    const Shape4 in = x[0].shape;
    const Shape4 out = output_shape(in);
    const int nb = static_cast<int>(x.size());

    Batch<T> y = detail::make_batch<T>(nb, out);
    if (mode == Mode::train) {
      cache_argmax_.assign(
          static_cast<size_t>(nb),
          std::vector<uint8_t>(static_cast<size_t>(out.numel()), 0));
    }

    const bool fast22 = pool_.h == 2 && pool_.w == 2;
    parallel_for(static_cast<int64_t>(nb) * out.c * out.t,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / (out.c * out.t));
        const int c = static_cast<int>((job / out.t) % out.c);
        const int to = static_cast<int>(job % out.t);
        const Tensor4<T>& xi = x[n];
        Tensor4<T>& yo = y[n];
        for (int ho = 0; ho < out.h; ++ho) {
          T* __restrict brow = yo.row(c, to, ho);
          uint8_t* __restrict arow =
              mode == Mode::train
                  ? cache_argmax_[static_cast<size_t>(n)].data() +
                        yo.index(c, to, ho, 0)
                  : nullptr;
          if (fast22) {
            for (int dt = 0; dt < pool_.t; ++dt) {
              const T* __restrict r0 =
                  xi.row(c, to * pool_.t + dt, ho * 2);
              const T* __restrict r1 =
                  xi.row(c, to * pool_.t + dt, ho * 2 + 1);
              const int base = dt * 4;
              for (int xo = 0; xo < out.w; ++xo) {
                T b;
                int off;
                if (dt == 0) {
                  b = r0[2 * xo];
                  off = 0;
                } else {
                  b = brow[xo];
                  off = arow ? arow[xo] : 0;
                }
                if (dt != 0 && r0[2 * xo] > b) {
                  b = r0[2 * xo];
                  off = base;
                }
                if (r0[2 * xo + 1] > b) {
                  b = r0[2 * xo + 1];
                  off = base + 1;
                }
                if (r1[2 * xo] > b) {
                  b = r1[2 * xo];
                  off = base + 2;
                }
                if (r1[2 * xo + 1] > b) {
                  b = r1[2 * xo + 1];
                  off = base + 3;
                }
                brow[xo] = b;
                if (arow) arow[xo] = static_cast<uint8_t>(off);
              }
            }
            continue;
          }
          for (int xo = 0; xo < out.w; ++xo) {
            T best{};
            int best_off = -1;
            int off = 0;
            for (int dt = 0; dt < pool_.t; ++dt) {
              for (int dh = 0; dh < pool_.h; ++dh) {
                const T* irow =
                    xi.row(c, to * pool_.t + dt, ho * pool_.h + dh) +
                    xo * pool_.w;
                for (int dw = 0; dw < pool_.w; ++dw, ++off) {
                  const T v = irow[dw];
                  if (best_off < 0 || v > best) {  // first max wins ties
                    best = v;
                    best_off = off;
                  }
                }
              }
            }
            brow[xo] = best;
            if (arow) arow[xo] = static_cast<uint8_t>(best_off);
          }
        }
      }
    });

    if (mode == Mode::train) {
      in_shape_ = in;
      out_shape_ = out;
      has_cache_ = true;
    }
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    if (!has_cache_) throw Error(name_ + ": backward before forward");
    const int nb = static_cast<int>(cache_argmax_.size());
    if (static_cast<int>(gy.size()) != nb)
      throw ShapeError(name_ + ": batch mismatch");
    for (const auto& g : gy) require_shape(g, out_shape_, name_.c_str());

    const Shape4 out = out_shape_;
    Batch<T> gx = detail::make_batch<T>(nb, in_shape_);
    parallel_for(static_cast<int64_t>(nb) * out.c * out.t,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / (out.c * out.t));
        const int c = static_cast<int>((job / out.t) % out.c);
        const int to = static_cast<int>(job % out.t);
        const auto& amax = cache_argmax_[static_cast<size_t>(n)];
        const Tensor4<T>& gyn = gy[n];
        Tensor4<T>& gxn = gx[n];
        for (int ho = 0; ho < out.h; ++ho) {
          for (int xo = 0; xo < out.w; ++xo) {
            const int64_t oidx = gyn.index(c, to, ho, xo);
            const int off = amax[static_cast<size_t>(oidx)];
            const int dw = off % pool_.w;
            const int dh = (off / pool_.w) % pool_.h;
            const int dt = off / (pool_.w * pool_.h);
            gxn.at(c, to * pool_.t + dt, ho * pool_.h + dh,
                   xo * pool_.w + dw) = gyn.data[static_cast<size_t>(oidx)];
          }
        }
      }
    });
    return gx;
  }

  void clear_cache() override {
    cache_argmax_.clear();
    has_cache_ = false;
  }

 private:
  std::string name_;
  Dims3 pool_;
  std::vector<std::vector<uint8_t>> cache_argmax_;
  Shape4 in_shape_{}, out_shape_{};
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Batch normalization over (batch, time, height, width) per channel.
// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm3d : public Layer<T> {
 public:
  BatchNorm3d(std::string name, int channels, double eps = 1e-5,
              double momentum = 0.1)
      : name_(std::move(name)),
        channels_(channels),
        eps_(eps),
        momentum_(momentum) {
    if (channels < 1) throw ConfigError(name_ + ": channels must be positive");
    gamma_.name = name_ + ".gamma";
    gamma_.resize(static_cast<size_t>(channels));
    beta_.name = name_ + ".beta";
    beta_.resize(static_cast<size_t>(channels));
    init_params();
    running_mean_.assign(static_cast<size_t>(channels), T(0));
    running_var_.assign(static_cast<size_t>(channels), T(1));
  }

  const std::string& name() const override { return name_; }
  std::string kind() const override { return "batchnorm"; }
  int channels() const { return channels_; }
  double eps() const { return eps_; }
  Param<T>& gamma() { return gamma_; }
  Param<T>& beta() { return beta_; }
  std::vector<T>& running_mean() { return running_mean_; }
  std::vector<T>& running_var() { return running_var_; }

  void init_params() {
    std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
    std::fill(beta_.value.begin(), beta_.value.end(), T(0));
  }

  Shape4 output_shape(const Shape4& in) const override {
    if (in.c != channels_) {
      throw ShapeError(name_ + ": expected " + std::to_string(channels_) +
                       " channels, got " + in.str());
    }
    return in;
  }

  Batch<T> forward(Batch<T> x, Mode mode) override {
    detail::check_batch(x, name_);
    const Shape4 in = x[0].shape;
    output_shape(in);
    const int nb = static_cast<int>(x.size());
    const int64_t plane = static_cast<int64_t>(in.t) * in.h * in.w;
    const int64_t m = plane * nb;
    if (m == 0) throw Error(name_ + ": zero-length batch");

    std::vector<double> mean(static_cast<size_t>(channels_), 0.0);
    std::vector<double> var(static_cast<size_t>(channels_), 0.0);

    if (mode == Mode::train) {
      // Two-pass per-channel statistics, fixed summation order.
      parallel_for(channels_, [&](int64_t cb, int64_t ce) {
        for (int64_t c = cb; c < ce; ++c) {
          double s = 0.0;
          for (int n = 0; n < nb; ++n) {
            const T* __restrict pp = x[n].data.data() + c * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc += pp[i];
            s += acc;
          }
          const double mu = s / static_cast<double>(m);
          double sq = 0.0;
          for (int n = 0; n < nb; ++n) {
            const T* __restrict pp = x[n].data.data() + c * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) {
              const double d = pp[i] - mu;
              acc += d * d;
            }
            sq += acc;
          }
          mean[static_cast<size_t>(c)] = mu;
          var[static_cast<size_t>(c)] = sq / static_cast<double>(m);
        }
      });
      for (int c = 0; c < channels_; ++c) {
        const double unbiased =
            m > 1 ? var[c] * static_cast<double>(m) / (m - 1) : var[c];
        running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] +
                                          momentum_ * mean[c]);
        running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] +
                                         momentum_ * unbiased);
      }
    } else {
      for (int c = 0; c < channels_; ++c) {
        mean[c] = static_cast<double>(running_mean_[c]);
        var[c] = static_cast<double>(running_var_[c]);
      }
    }

    std::vector<T> inv_std(static_cast<size_t>(channels_));
    for (int c = 0; c < channels_; ++c) {
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] + eps_));
    }

    Batch<T> y = detail::make_batch<T>(nb, in);
    parallel_for(static_cast<int64_t>(nb) * channels_,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / channels_);
        const int c = static_cast<int>(job % channels_);
        const T mu = static_cast<T>(mean[c]);
        const T is = inv_std[c];
        const T g = gamma_.value[c], bt = beta_.value[c];
        const T* __restrict pp = x[n].data.data() + c * plane;
        T* __restrict q = y[n].data.data() + c * plane;
        for (int64_t i = 0; i < plane; ++i) q[i] = g * (pp[i] - mu) * is + bt;
      }
    });

    if (mode == Mode::train) {
      cache_in_ = std::move(x);
      cache_mean_ = std::move(mean);
      cache_inv_std_.assign(inv_std.begin(), inv_std.end());
      has_cache_ = true;
    }
    return y;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    if (!has_cache_) throw Error(name_ + ": backward before forward");
    const Batch<T>& x = cache_in_;
    const Shape4 in = x[0].shape;
    const int nb = static_cast<int>(x.size());
    if (gy.size() != x.size()) throw ShapeError(name_ + ": batch mismatch");
    for (const auto& g : gy) require_shape(g, in, name_.c_str());
    const int64_t plane = static_cast<int64_t>(in.t) * in.h * in.w;
    const int64_t m = plane * nb;

    std::vector<double> s1(static_cast<size_t>(channels_), 0.0);
    std::vector<double> s2(static_cast<size_t>(channels_), 0.0);
    parallel_for(channels_, [&](int64_t cb, int64_t ce) {
      for (int64_t c = cb; c < ce; ++c) {
        const double mu = cache_mean_[static_cast<size_t>(c)];
        const double is = cache_inv_std_[static_cast<size_t>(c)];
        double a1 = 0.0, a2 = 0.0;
        for (int n = 0; n < nb; ++n) {
          const T* __restrict px = x[n].data.data() + c * plane;
          const T* __restrict pg = gy[n].data.data() + c * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const double xh = (px[i] - mu) * is;
            a1 += pg[i];
            a2 += pg[i] * xh;
          }
        }
        s1[static_cast<size_t>(c)] = a1;
        s2[static_cast<size_t>(c)] = a2;
      }
    });

    for (int c = 0; c < channels_; ++c) {
      gamma_.grad[c] += static_cast<T>(s2[c]);
      beta_.grad[c] += static_cast<T>(s1[c]);
    }

    Batch<T> gx = detail::make_batch<T>(nb, in);
    parallel_for(static_cast<int64_t>(nb) * channels_,
                 [&](int64_t jb, int64_t je) {
      for (int64_t job = jb; job < je; ++job) {
        const int n = static_cast<int>(job / channels_);
        const int c = static_cast<int>(job % channels_);
        const double mu = cache_mean_[c];
        const double is = cache_inv_std_[c];
        const double g = static_cast<double>(gamma_.value[c]);
        const double k1 = s1[c] / static_cast<double>(m);
        const double k2 = s2[c] / static_cast<double>(m);
        const T* __restrict px = x[n].data.data() + c * plane;
        const T* __restrict pg = gy[n].data.data() + c * plane;
        T* __restrict pq = gx[n].data.data() + c * plane;
        for (int64_t i = 0; i < plane; ++i) {
          const double xh = (px[i] - mu) * is;
          pq[i] = static_cast<T>(g * is * (pg[i] - k1 - xh * k2));
        }
      }
    });
    return gx;
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  void clear_cache() override {
    cache_in_.clear();
    has_cache_ = false;
  }

 private:
  std::string name_;
  int channels_;
  double eps_, momentum_;
  Param<T> gamma_, beta_;
  std::vector<T> running_mean_, running_var_;
  Batch<T> cache_in_;
  std::vector<double> cache_mean_;
  std::vector<double> cache_inv_std_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------
// Pointwise activations.
// ---------------------------------------------------------------------------

template <typename T>
class ReLU : public Layer<T> {
 public:
  explicit ReLU(std::string name) : name_(std::move(name)) {}

  const std::string& name() const override { return name_; }
  std::string kind() const override { return "relu"; }
  Shape4 output_shape(const Shape4& in) const override { return in; }

  Batch<T> forward(Batch<T> x, Mode mode) override {
    detail::check_batch(x, name_);
    if (mode == Mode::train) {
      // Keep the pre-activation input; rectify into a fresh batch.
      Batch<T> y = x;
      for (auto& t : y) {
        T* __restrict pp = t.data.data();
        const int64_t cnt = t.numel();
        parallel_for(cnt, [&](int64_t b, int64_t e) {
          for (int64_t i = b; i < e; ++i) pp[i] = pp[i] > T(0) ? pp[i] : T(0);
        });
      }
      cache_in_ = std::move(x);
      has_cache_ = true;
      return y;
    }
    for (auto& t : x) {
      T* __restrict pp = t.data.data();
      const int64_t cnt = t.numel();
      parallel_for(cnt, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) pp[i] = pp[i] > T(0) ? pp[i] : T(0);
      });
    }
    return x;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    if (!has_cache_) throw Error(name_ + ": backward before forward");
    if (gy.size() != cache_in_.size())
      throw ShapeError(name_ + ": batch mismatch");
    Batch<T> gx = gy;
    for (size_t n = 0; n < gx.size(); ++n) {
      require_shape(gy[n], cache_in_[n].shape, name_.c_str());
      const T* __restrict px = cache_in_[n].data.data();
      T* __restrict pg = gx[n].data.data();
      const int64_t cnt = gx[n].numel();
      parallel_for(cnt, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) {
          if (px[i] <= T(0)) pg[i] = T(0);
        }
      });
    }
    return gx;
  }

  void clear_cache() override {
    cache_in_.clear();
    has_cache_ = false;
  }

 private:
  std::string name_;
  Batch<T> cache_in_;
  bool has_cache_ = false;
};

template <typename T>
class Sigmoid : public Layer<T> {
 public:
  explicit Sigmoid(std::string name) : name_(std::move(name)) {}

  const std::string& name() const override { return name_; }
  std::string kind() const override { return "sigmoid"; }
  Shape4 output_shape(const Shape4& in) const override { return in; }

  Batch<T> forward(Batch<T> x, Mode mode) override {
    detail::check_batch(x, name_);
    for (auto& t : x) {
      T* __restrict pp = t.data.data();
      const int64_t cnt = t.numel();
      parallel_for(cnt, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) {
          pp[i] = T(1) / (T(1) + std::exp(-pp[i]));
        }
      });
    }
    if (mode == Mode::train) {
      cache_out_ = x;  // backward needs the activation itself
      has_cache_ = true;
    }
    return x;
  }

  Batch<T> backward(const Batch<T>& gy) override {
    if (!has_cache_) throw Error(name_ + ": backward before forward");
    if (gy.size() != cache_out_.size())
      throw ShapeError(name_ + ": batch mismatch");
    Batch<T> gx = gy;
    for (size_t n = 0; n < gx.size(); ++n) {
      require_shape(gy[n], cache_out_[n].shape, name_.c_str());
      const T* __restrict py = cache_out_[n].data.data();
      T* __restrict pg = gx[n].data.data();
      const int64_t cnt = gx[n].numel();
      parallel_for(cnt, [&](int64_t b, int64_t e) {
        for (int64_t i = b; i < e; ++i) pg[i] *= py[i] * (T(1) - py[i]);
      });
    }
    return gx;
  }

  void clear_cache() override {
    cache_out_.clear();
    has_cache_ = false;
  }

 private:
  std::string name_;
  Batch<T> cache_out_;
  bool has_cache_ = false;
};

}  // namespace veil
