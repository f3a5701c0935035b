// Forward-path oracles for the numeric engine: direct-summation references
// for the convolutions, analytic cases for pooling, batchnorm, the windowed
// MSE loss, Adam and the seeded initializer.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support/gradcheck.hpp"
#include "veil/adam.hpp"
#include "veil/layers.hpp"
#include "veil/loss.hpp"
#include "veil/model.hpp"

namespace {

using veil::Batch;
using veil::Conv3d;
using veil::ConvSpec;
using veil::ConvTranspose3d;
using veil::Dims3;
using veil::Mode;
using veil::Rng;
using veil::Shape4;
using veil::Tensor4;

// Direct six-loop cross-correlation, the reference the implementation must
// match.
Tensor4<double> conv_oracle(const Tensor4<double>& x,
                            const std::vector<double>& w,
                            const std::vector<double>& bias,
                            const ConvSpec& s) {
  const Shape4 in = x.shape;
  const Shape4 out{
      s.out_c,
      veil::conv_out_extent(in.t, s.kernel.t, s.stride.t, s.pad.t),
      veil::conv_out_extent(in.h, s.kernel.h, s.stride.h, s.pad.h),
      veil::conv_out_extent(in.w, s.kernel.w, s.stride.w, s.pad.w)};
  Tensor4<double> y(out);
  for (int oc = 0; oc < out.c; ++oc)
    for (int to = 0; to < out.t; ++to)
      for (int ho = 0; ho < out.h; ++ho)
        for (int xo = 0; xo < out.w; ++xo) {
          double acc = bias[static_cast<size_t>(oc)];
          for (int ic = 0; ic < in.c; ++ic)
            for (int kt = 0; kt < s.kernel.t; ++kt)
              for (int kh = 0; kh < s.kernel.h; ++kh)
                for (int kw = 0; kw < s.kernel.w; ++kw) {
                  const int ti = to * s.stride.t + kt - s.pad.t;
                  const int hi = ho * s.stride.h + kh - s.pad.h;
                  const int wi = xo * s.stride.w + kw - s.pad.w;
                  if (ti < 0 || ti >= in.t || hi < 0 || hi >= in.h ||
                      wi < 0 || wi >= in.w)
                    continue;
                  const size_t widx =
                      ((((static_cast<size_t>(oc) * in.c + ic) * s.kernel.t +
                         kt) *
                        s.kernel.h) +
                       kh) *
                          s.kernel.w +
                      kw;
                  acc += w[widx] * x.at(ic, ti, hi, wi);
                }
          y.at(oc, to, ho, xo) = acc;
        }
  return y;
}

// Scatter-form transposed convolution, the independent route against the
// gather-form implementation.
Tensor4<double> deconv_oracle(const Tensor4<double>& x,
                              const std::vector<double>& w,
                              const std::vector<double>& bias,
                              const ConvSpec& s) {
  const Shape4 in = x.shape;
  const Shape4 out{s.out_c,
                   veil::deconv_out_extent(in.t, s.kernel.t, s.stride.t,
                                           s.pad.t, s.out_pad.t),
                   veil::deconv_out_extent(in.h, s.kernel.h, s.stride.h,
                                           s.pad.h, s.out_pad.h),
                   veil::deconv_out_extent(in.w, s.kernel.w, s.stride.w,
                                           s.pad.w, s.out_pad.w)};
  Tensor4<double> y(out);
  for (int oc = 0; oc < out.c; ++oc)
    for (int to = 0; to < out.t; ++to)
      for (int ho = 0; ho < out.h; ++ho)
        for (int xo = 0; xo < out.w; ++xo)
          y.at(oc, to, ho, xo) = bias[static_cast<size_t>(oc)];
  for (int ic = 0; ic < in.c; ++ic)
    for (int ti = 0; ti < in.t; ++ti)
      for (int hi = 0; hi < in.h; ++hi)
        for (int wi = 0; wi < in.w; ++wi)
          for (int oc = 0; oc < out.c; ++oc)
            for (int kt = 0; kt < s.kernel.t; ++kt)
              for (int kh = 0; kh < s.kernel.h; ++kh)
                for (int kw = 0; kw < s.kernel.w; ++kw) {
                  const int to = ti * s.stride.t + kt - s.pad.t;
                  const int ho = hi * s.stride.h + kh - s.pad.h;
                  const int xo = wi * s.stride.w + kw - s.pad.w;
                  if (to < 0 || to >= out.t || ho < 0 || ho >= out.h ||
                      xo < 0 || xo >= out.w)
                    continue;
                  const size_t widx =
                      ((((static_cast<size_t>(ic) * out.c + oc) * s.kernel.t +
                         kt) *
                        s.kernel.h) +
                       kh) *
                          s.kernel.w +
                      kw;
                  y.at(oc, to, ho, xo) += w[widx] * x.at(ic, ti, hi, wi);
                }
  return y;
}

TEST(Conv3d, AllOnesKernelCenterAndCorner) {
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {3, 3, 3};
  s.stride = {1, 1, 1};
  s.pad = {1, 1, 1};
  Conv3d<double> conv("t.conv", s);
  std::fill(conv.weight().value.begin(), conv.weight().value.end(), 1.0);
  std::fill(conv.bias().value.begin(), conv.bias().value.end(), 0.0);
  Tensor4<double> x(Shape4{1, 3, 3, 3}, 1.0);
  const Batch<double> y = conv.forward({x}, Mode::eval);
  ASSERT_EQ(y[0].shape, (Shape4{1, 3, 3, 3}));
  // Full overlap at the center, 2x2x2 overlap at each corner.
  EXPECT_DOUBLE_EQ(y[0].at(0, 1, 1, 1), 27.0);
  EXPECT_DOUBLE_EQ(y[0].at(0, 0, 0, 0), 8.0);
  EXPECT_DOUBLE_EQ(y[0].at(0, 2, 2, 2), 8.0);
  const Tensor4<double> want =
      conv_oracle(x, conv.weight().value, conv.bias().value, s);
  for (size_t i = 0; i < want.data.size(); ++i) {
    EXPECT_DOUBLE_EQ(y[0].data[i], want.data[i]);
  }
}

TEST(Conv3d, ZeroKernelGivesZeroOutput) {
  ConvSpec s;
  s.in_c = 2;
  s.out_c = 3;
  s.kernel = {3, 3, 3};
  s.stride = {1, 1, 1};
  s.pad = {1, 1, 1};
  Conv3d<double> conv("t.conv", s);
  std::fill(conv.weight().value.begin(), conv.weight().value.end(), 0.0);
  Rng rng(7);
  const Tensor4<double> x = veiltest::random_tensor(Shape4{2, 4, 5, 6}, rng);
  const Batch<double> y = conv.forward({x}, Mode::eval);
  for (const double v : y[0].data) EXPECT_EQ(v, 0.0);
}

TEST(Conv3d, IdentityKernelReproducesInput) {
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {3, 3, 3};
  s.stride = {1, 1, 1};
  s.pad = {1, 1, 1};
  Conv3d<double> conv("t.conv", s);
  std::fill(conv.weight().value.begin(), conv.weight().value.end(), 0.0);
  conv.weight().value[13] = 1.0;  // kernel center (1,1,1)
  Rng rng(8);
  const Tensor4<double> x = veiltest::random_tensor(Shape4{1, 4, 5, 6}, rng);
  const Batch<double> y = conv.forward({x}, Mode::eval);
  ASSERT_EQ(y[0].shape, x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) {
    EXPECT_DOUBLE_EQ(y[0].data[i], x.data[i]);
  }
}

TEST(Conv3d, MatchesOracleOnRandomSpecs) {
  Rng rng(1234);
  for (int trial = 0; trial < 10; ++trial) {
    auto c = veiltest::make_conv_case(rng);
    auto* conv = dynamic_cast<Conv3d<double>*>(c.layer.get());
    ASSERT_NE(conv, nullptr);
    const Batch<double> y = c.layer->forward(c.input, Mode::eval);
    for (size_t n = 0; n < c.input.size(); ++n) {
      const Tensor4<double> want = conv_oracle(
          c.input[n], conv->weight().value, conv->bias().value, conv->spec());
      ASSERT_EQ(y[n].shape, want.shape);
      for (size_t i = 0; i < want.data.size(); ++i) {
        EXPECT_NEAR(y[n].data[i], want.data[i], 1e-9);
      }
    }
  }
}

TEST(Conv3d, RejectsShapeMismatchWithDimensionReport) {
  ConvSpec s;
  s.in_c = 2;
  s.out_c = 1;
  s.kernel = {3, 3, 3};
  Conv3d<double> conv("t.conv", s);
  Tensor4<double> x(Shape4{1, 4, 4, 4});
  try {
    conv.forward({x}, Mode::eval);
    FAIL() << "expected ShapeError";
  } catch (const veil::ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
  // Too small for the kernel without padding.
  ConvSpec s2 = s;
  s2.in_c = 1;
  Conv3d<double> conv2("t.conv2", s2);
  Tensor4<double> tiny(Shape4{1, 2, 2, 2});
  EXPECT_THROW(conv2.forward({tiny}, Mode::eval), veil::ShapeError);
}

TEST(Conv3d, RejectsNonFiniteInput) {
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {1, 1, 1};
  Conv3d<double> conv("t.conv", s);
  Tensor4<double> x(Shape4{1, 2, 2, 2}, 1.0);
  x.data[3] = std::nan("");
  EXPECT_THROW(conv.forward({x}, Mode::eval), veil::Error);
}

TEST(Conv3d, LinearInInputAndWeights) {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    auto c = veiltest::make_conv_case(rng);
    auto* conv = dynamic_cast<Conv3d<double>*>(c.layer.get());
    std::fill(conv->bias().value.begin(), conv->bias().value.end(), 0.0);
    const Tensor4<double>& x = c.input[0];
    Tensor4<double> x2 = veiltest::random_tensor(x.shape, rng);
    const double a = 0.7, b = -1.3;
    Tensor4<double> mix(x.shape);
    for (size_t i = 0; i < mix.data.size(); ++i) {
      mix.data[i] = a * x.data[i] + b * x2.data[i];
    }
    const auto y1 = conv->forward({x}, Mode::eval);
    const auto y2 = conv->forward({x2}, Mode::eval);
    const auto ym = conv->forward({mix}, Mode::eval);
    for (size_t i = 0; i < ym[0].data.size(); ++i) {
      EXPECT_NEAR(ym[0].data[i], a * y1[0].data[i] + b * y2[0].data[i], 1e-9);
    }
    // Linearity in the weights as well.
    const auto w0 = conv->weight().value;
    const auto yw0 = conv->forward({x}, Mode::eval);
    for (auto& w : conv->weight().value) w *= 2.5;
    const auto yw1 = conv->forward({x}, Mode::eval);
    for (size_t i = 0; i < yw0[0].data.size(); ++i) {
      EXPECT_NEAR(yw1[0].data[i], 2.5 * yw0[0].data[i], 1e-9);
    }
  }
}

TEST(ConvTranspose3d, SizeFormulaMatchesDecoderGeometry) {
  // Temporal chain of the spatio-temporal decoder: 25 frames back to 75.
  EXPECT_EQ(veil::deconv_out_extent(25, 3, 3, 0, 0), 75);
  // Spatial upsampling stage: 16 -> 32.
  EXPECT_EQ(veil::deconv_out_extent(16, 3, 2, 1, 1), 32);
}

TEST(ConvTranspose3d, SingleVoxelEmitsScaledKernel) {
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {3, 3, 3};
  s.stride = {1, 1, 1};
  s.pad = {0, 0, 0};
  ConvTranspose3d<double> deconv("t.deconv", s);
  Rng rng(5);
  for (auto& w : deconv.weight().value) w = rng.next_uniform(-1, 1);
  std::fill(deconv.bias().value.begin(), deconv.bias().value.end(), 0.0);
  Tensor4<double> x(Shape4{1, 1, 1, 1});
  const double v = 2.75;
  x.data[0] = v;
  const Batch<double> y = deconv.forward({x}, Mode::eval);
  ASSERT_EQ(y[0].shape, (Shape4{1, 3, 3, 3}));
  for (size_t i = 0; i < 27; ++i) {
    EXPECT_NEAR(y[0].data[i], v * deconv.weight().value[i], 1e-12);
  }
}

TEST(ConvTranspose3d, RejectsOutputPaddingNotBelowStride) {
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {3, 3, 3};
  s.stride = {1, 2, 2};
  s.out_pad = {0, 2, 0};  // = stride.h
  EXPECT_THROW(ConvTranspose3d<double>("t.deconv", s), veil::ConfigError);
}

TEST(ConvTranspose3d, MatchesScatterOracleOnRandomSpecs) {
  Rng rng(4321);
  for (int trial = 0; trial < 10; ++trial) {
    auto c = veiltest::make_deconv_case(rng);
    auto* deconv = dynamic_cast<ConvTranspose3d<double>*>(c.layer.get());
    ASSERT_NE(deconv, nullptr);
    const Batch<double> y = c.layer->forward(c.input, Mode::eval);
    for (size_t n = 0; n < c.input.size(); ++n) {
      const Tensor4<double> want =
          deconv_oracle(c.input[n], deconv->weight().value,
                        deconv->bias().value, deconv->spec());
      ASSERT_EQ(y[n].shape, want.shape);
      for (size_t i = 0; i < want.data.size(); ++i) {
        EXPECT_NEAR(y[n].data[i], want.data[i], 1e-9);
      }
    }
  }
}

TEST(MaxPool3d, WindowGeometryAndValues) {
  veil::MaxPool3d<float> pool("t.pool", Dims3{3, 2, 2});
  EXPECT_EQ(pool.output_shape(Shape4{1, 75, 64, 64}), (Shape4{1, 25, 32, 32}));

  veil::MaxPool3d<float> pool2("t.pool2", Dims3{1, 2, 2});
  Tensor4<float> x(Shape4{1, 1, 2, 2});
  x.data = {0.1f, 0.7f, 0.3f, 0.5f};
  const auto y = pool2.forward({x}, Mode::eval);
  ASSERT_EQ(y[0].numel(), 1);
  EXPECT_FLOAT_EQ(y[0].data[0], 0.7f);
}

TEST(MaxPool3d, ConstantFieldStaysConstant) {
  veil::MaxPool3d<float> pool("t.pool", Dims3{3, 2, 2});
  Tensor4<float> x(Shape4{2, 6, 4, 4}, 0.4f);
  const auto y = pool.forward({x}, Mode::eval);
  ASSERT_EQ(y[0].shape, (Shape4{2, 2, 2, 2}));
  for (const float v : y[0].data) EXPECT_FLOAT_EQ(v, 0.4f);
}

TEST(MaxPool3d, RejectsNonDivisibleExtents) {
  veil::MaxPool3d<float> pool("t.pool", Dims3{3, 2, 2});
  Tensor4<float> x(Shape4{1, 7, 4, 4});
  EXPECT_THROW(pool.forward({x}, Mode::eval), veil::ShapeError);
}

TEST(BatchNorm3d, AlreadyNormalizedPassesThrough) {
  veil::BatchNorm3d<double> bn("t.bn", 1);
  // A zero-mean, unit-variance channel: alternating +1/-1.
  Tensor4<double> x(Shape4{1, 2, 2, 2});
  for (size_t i = 0; i < x.data.size(); ++i) x.data[i] = i % 2 ? 1.0 : -1.0;
  const auto y = bn.forward({x}, Mode::train);
  for (size_t i = 0; i < x.data.size(); ++i) {
    EXPECT_NEAR(y[0].data[i], x.data[i], 1e-4);  // eps-stabilized variance
  }
}

TEST(BatchNorm3d, ConstantChannelMapsToZero) {
  veil::BatchNorm3d<double> bn("t.bn", 2);
  Tensor4<double> x(Shape4{2, 3, 4, 4}, 3.7);
  const auto y = bn.forward({x}, Mode::train);
  for (const double v : y[0].data) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(BatchNorm3d, ZeroGammaBroadcastsBeta) {
  veil::BatchNorm3d<double> bn("t.bn", 2);
  std::fill(bn.gamma().value.begin(), bn.gamma().value.end(), 0.0);
  bn.beta().value = {0.25, -1.5};
  Rng rng(3);
  const Tensor4<double> x = veiltest::random_tensor(Shape4{2, 2, 3, 3}, rng);
  const auto y = bn.forward({x}, Mode::train);
  const int64_t plane = 2 * 3 * 3;
  for (int64_t i = 0; i < plane; ++i) {
    EXPECT_DOUBLE_EQ(y[0].data[static_cast<size_t>(i)], 0.25);
    EXPECT_DOUBLE_EQ(y[0].data[static_cast<size_t>(plane + i)], -1.5);
  }
}

TEST(BatchNorm3d, RejectsEmptyBatch) {
  veil::BatchNorm3d<double> bn("t.bn", 1);
  Batch<double> empty;
  EXPECT_THROW(bn.forward(empty, Mode::train), veil::Error);
}

TEST(BatchNorm3d, EvalUsesRunningStats) {
  veil::BatchNorm3d<double> bn("t.bn", 1);
  Rng rng(17);
  Tensor4<double> x = veiltest::random_tensor(Shape4{1, 2, 4, 4}, rng, 2.0,
                                              4.0);
  bn.forward({x}, Mode::train);
  // Fresh running stats start at mean 0 / var 1 and move toward the batch
  // stats with momentum 0.1; eval must use them, not the batch stats.
  const auto y = bn.forward({x}, Mode::eval);
  double batch_mean = 0.0;
  for (const double v : x.data) batch_mean += v;
  batch_mean /= static_cast<double>(x.numel());
  const double rm = bn.running_mean()[0];
  EXPECT_NEAR(rm, 0.1 * batch_mean, 1e-12);
  // y = (x - rm)/sqrt(rv + eps); spot-check one element.
  const double rv = bn.running_var()[0];
  EXPECT_NEAR(y[0].data[0],
              (x.data[0] - rm) / std::sqrt(rv + bn.eps()), 1e-12);
}

TEST(WindowMse, AnalyticCases) {
  const Shape4 win{1, 75, 64, 64};
  Tensor4<float> zeros(win, 0.f);
  Tensor4<float> ones(win, 1.f);
  EXPECT_EQ(veil::window_mse(ones, ones), 0.0);
  // 307,200 unit squared errors / 307,200.
  EXPECT_EQ(veil::window_mse(ones, zeros), 1.0);

  Tensor4<float> almost = ones;
  almost.data[12345] = 0.5f;
  EXPECT_DOUBLE_EQ(veil::window_mse(ones, almost), 0.25 / 307200.0);

  Tensor4<float> other(Shape4{1, 75, 64, 32});
  EXPECT_THROW(veil::window_mse(ones, other), veil::ShapeError);
}

TEST(WindowMse, NonNegativeWithEqualityIffEqual) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Shape4 s{1, 3, 8, 8};
    const auto a = veiltest::random_tensor(s, rng, 0.0, 1.0);
    auto b = veiltest::random_tensor(s, rng, 0.0, 1.0);
    const double l = veil::window_mse(a, b);
    EXPECT_GE(l, 0.0);
    if (l == 0.0) {
      for (size_t i = 0; i < a.data.size(); ++i) {
        EXPECT_EQ(a.data[i], b.data[i]);
      }
    }
    EXPECT_EQ(veil::window_mse(a, a), 0.0);
  }
}

TEST(Adam, ZeroGradientLeavesParamsAndBumpsStep) {
  veil::Param<double> p;
  p.name = "t.p";
  p.resize(4);
  p.value = {1.0, -2.0, 3.0, 0.5};
  veil::Adam<double> opt(1e-3);
  opt.step({&p});
  EXPECT_EQ(opt.step_count(), 1);
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_EQ(p.value[3], 0.5);
}

TEST(Adam, FirstStepMatchesHandDerivedUpdate) {
  veil::Param<double> p;
  p.name = "t.p";
  p.resize(1);
  p.value = {0.0};
  p.grad = {1.0};
  veil::Adam<double> opt(1e-3);
  opt.step({&p});
  // m-hat = 1, v-hat = 1 after bias correction, so the step is
  // -lr / (1 + eps).
  EXPECT_NEAR(p.value[0], -1e-3 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value[0], -1e-3, 1e-8);
}

TEST(Adam, ConstantGradientMovesMonotonically) {
  veil::Param<double> p;
  p.name = "t.p";
  p.resize(1);
  p.value = {1.0};
  veil::Adam<double> opt(1e-2);
  double prev = p.value[0];
  for (int i = 0; i < 50; ++i) {
    p.grad = {0.7};
    opt.step({&p});
    EXPECT_LT(p.value[0], prev);
    prev = p.value[0];
  }
}

TEST(Adam, RejectsNonFiniteGradientNamingParam) {
  veil::Param<double> p;
  p.name = "enc1.conv.weight";
  p.resize(2);
  p.grad = {0.0, std::numeric_limits<double>::infinity()};
  veil::Adam<double> opt(1e-3);
  try {
    opt.step({&p});
    FAIL() << "expected Error";
  } catch (const veil::Error& e) {
    EXPECT_NE(std::string(e.what()).find("enc1.conv.weight"),
              std::string::npos);
  }
}

TEST(SeededInit, DeterministicAndSeedSensitive) {
  veil::ModelConfig cfg;
  cfg.kind = veil::ModelKind::cae2d;
  cfg.seed = 42;
  auto a = veil::build_cae2d<float>(cfg);
  auto b = veil::build_cae2d<float>(cfg);
  const auto pa = a.params();
  const auto pb = b.params();
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i]->value.size(), pb[i]->value.size());
    for (size_t k = 0; k < pa[i]->value.size(); ++k) {
      EXPECT_EQ(pa[i]->value[k], pb[i]->value[k]) << pa[i]->name;
    }
  }
  cfg.seed = 43;
  auto c = veil::build_cae2d<float>(cfg);
  const auto pc = c.params();
  bool any_diff = false;
  for (size_t k = 0; k < pa[0]->value.size(); ++k) {
    any_diff |= pa[0]->value[k] != pc[0]->value[k];
  }
  EXPECT_TRUE(any_diff);
}

TEST(SeededInit, WeightVarianceTracksFanIn) {
  ConvSpec s;
  s.in_c = 8;
  s.out_c = 50;
  s.kernel = {3, 3, 3};
  Conv3d<double> conv("t.conv", s);
  Rng rng(2024);
  conv.init_params(rng);
  const auto& w = conv.weight().value;
  ASSERT_GE(w.size(), 10000u);
  double mean = 0.0;
  for (const double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (const double v : w) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.size());
  const double want = 2.0 / static_cast<double>(s.fan_in());
  EXPECT_NEAR(var, want, 0.2 * want);
  for (const double b : conv.bias().value) EXPECT_EQ(b, 0.0);
}

TEST(Backward, SingleLinearLayerMatchesHandDerivation) {
  // A 1x1x1 convolution is y_i = w*x_i + b. With L = (1/4) sum (y_i - t_i)^2
  // over a 2x2 plane: dL/dw = (1/2) sum (y_i - t_i) x_i,
  // dL/db = (1/2) sum (y_i - t_i), dL/dx_i = (1/2) (y_i - t_i) w.
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {1, 1, 1};
  Conv3d<double> conv("t.lin", s);
  conv.weight().value = {1.5};
  conv.bias().value = {0.25};
  Tensor4<double> x(Shape4{1, 1, 2, 2});
  x.data = {1.0, -2.0, 0.5, 3.0};
  Tensor4<double> target(Shape4{1, 1, 2, 2});
  target.data = {0.0, 1.0, -1.0, 2.0};

  const auto y = conv.forward({x}, Mode::train);
  const auto g = veil::window_mse_grad(target, y[0]);
  conv.weight().zero_grad();
  conv.bias().zero_grad();
  const auto gx = conv.backward({g});

  double dw = 0.0, db = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double yi = 1.5 * x.data[static_cast<size_t>(i)] + 0.25;
    const double r = yi - target.data[static_cast<size_t>(i)];
    dw += 0.5 * r * x.data[static_cast<size_t>(i)];
    db += 0.5 * r;
    EXPECT_NEAR(gx[0].data[static_cast<size_t>(i)], 0.5 * r * 1.5, 1e-12);
  }
  EXPECT_NEAR(conv.weight().grad[0], dw, 1e-12);
  EXPECT_NEAR(conv.bias().grad[0], db, 1e-12);
}

TEST(Backward, ZeroLossGivesZeroGradients) {
  veil::ModelConfig cfg;
  cfg.kind = veil::ModelKind::cae2d;
  cfg.channels = {2, 4};
  cfg.seed = 5;
  auto model = veil::build_cae2d<float>(cfg);
  Tensor4<float> x(veil::kWindowShape, 0.3f);
  const auto y = model.forward({x}, Mode::train);
  // Loss of the reconstruction against itself: gradient is identically 0.
  const auto g = veil::window_mse_grad(y[0], y[0]);
  model.zero_grad();
  model.backward({g});
  for (const auto* p : model.params()) {
    for (const float v : p->grad) EXPECT_EQ(v, 0.f);
  }
}

TEST(Backward, BeforeForwardIsRejected) {
  ConvSpec s;
  s.in_c = 1;
  s.out_c = 1;
  s.kernel = {1, 1, 1};
  Conv3d<double> conv("t.conv", s);
  Tensor4<double> g(Shape4{1, 1, 1, 1});
  EXPECT_THROW(conv.backward({g}), veil::Error);
  // Eval-mode forward records nothing.
  Tensor4<double> x(Shape4{1, 1, 1, 1}, 1.0);
  conv.forward({x}, Mode::eval);
  EXPECT_THROW(conv.backward({g}), veil::Error);
}

}  // namespace
