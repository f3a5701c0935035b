#pragma once

#include <memory>
#include <string>
#include <vector>

#include "veil/common.hpp"
#include "veil/layers.hpp"
#include "veil/tensor.hpp"

namespace veil {

enum class ModelKind { cae3d, cae2d };

inline const char* model_kind_name(ModelKind k) {
  return k == ModelKind::cae3d ? "cae3d" : "cae2d";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "cae3d") return ModelKind::cae3d;
  if (s == "cae2d") return ModelKind::cae2d;
  throw ConfigError("unknown model kind '" + s + "' (expected cae3d|cae2d)");
}

/// Windows are 5-second clips of 15 fps frames at 64x64.
inline constexpr Shape4 kWindowShape{1, 75, 64, 64};

struct ModelConfig {
  ModelKind kind = ModelKind::cae2d;
  std::vector<int> channels = {16, 32};  // encoder widths
  uint64_t seed = 0;
};

/// An ordered layer stack with (channels,75,64,64) shape algebra verified at
/// build time.
template <typename T>
class ModelGraph {
 public:
  ModelGraph(ModelConfig config,
             std::vector<std::unique_ptr<Layer<T>>> layers)
      : config_(std::move(config)), layers_(std::move(layers)) {}

  const ModelConfig& config() const { return config_; }
  std::vector<std::unique_ptr<Layer<T>>>& layers() { return layers_; }
  const std::vector<std::unique_ptr<Layer<T>>>& layers() const {
    return layers_;
  }

  /// Shapes after each layer for a given input shape; throws ShapeError with
  /// the trace accumulated so far if any layer rejects.
  std::vector<std::pair<std::string, Shape4>> shape_trace(Shape4 in) const {
    std::vector<std::pair<std::string, Shape4>> trace;
    trace.emplace_back("input", in);
    for (const auto& l : layers_) {
      try {
        in = l->output_shape(in);
      } catch (const Error& e) {
        std::string msg = "shape algebra does not close:\n";
        for (const auto& [name, s] : trace) {
          msg += "  " + name + " -> " + s.str() + "\n";
        }
        msg += "  " + l->name() + " rejected: " + e.what();
        throw ShapeError(msg);
      }
      trace.emplace_back(l->name(), in);
    }
    return trace;
  }

  Shape4 output_shape(Shape4 in) const { return shape_trace(in).back().second; }

  /// Shape after the encoder's last pooling stage.
  Shape4 bottleneck_shape(Shape4 in) const {
    const auto trace = shape_trace(in);
    Shape4 bottleneck = in;
    size_t i = 1;
    for (const auto& l : layers_) {
      if (l->kind() == "maxpool") bottleneck = trace[i].second;
      ++i;
    }
    return bottleneck;
  }

  Batch<T> forward(Batch<T> x, Mode mode) {
    for (auto& l : layers_) x = l->forward(std::move(x), mode);
    return x;
  }

  Batch<T> backward(const Batch<T>& grad_out) {
    Batch<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      g = (*it)->backward(g);
    }
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_) {
      for (Param<T>* p : l->params()) out.push_back(p);
    }
    return out;
  }

  void zero_grad() {
    for (Param<T>* p : params()) p->zero_grad();
  }

  void clear_caches() {
    for (auto& l : layers_) l->clear_cache();
  }

  /// Total number of trainable scalars; a pure function of the config.
  int64_t param_count() {
    int64_t n = 0;
    for (Param<T>* p : params()) n += static_cast<int64_t>(p->value.size());
    return n;
  }

 private:
  ModelConfig config_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
class ModelGraph;
template <typename T>
void seeded_init(ModelGraph<T>& g);

namespace detail {

inline void validate_model_config(const ModelConfig& cfg, ModelKind want) {
  if (cfg.kind != want) {
    throw ConfigError(std::string("builder expects kind ") +
                      model_kind_name(want) + ", config says " +
                      model_kind_name(cfg.kind));
  }
  if (cfg.channels.size() != 2) {
    throw ConfigError("model config needs exactly 2 encoder channel widths");
  }
  for (int c : cfg.channels) {
    if (c < 1) throw ConfigError("channel widths must be positive");
  }
}

}  // namespace detail

/// Spatio-temporal autoencoder: 3x3x3 kernels throughout, temporal pooling by
/// 3 and spatial pooling by 2 then 2 in the encoder; the decoder's strides
/// (1,1,1), (1,2,2), (3,2,2) invert the pooling. Output paddings (0,0,0),
/// (0,1,1), (0,1,1) close the size algebra back to (1,75,64,64).
template <typename T>
ModelGraph<T> build_cae3d(const ModelConfig& config) {
  detail::validate_model_config(config, ModelKind::cae3d);
  const int c1 = config.channels[0];
  const int c2 = config.channels[1];

  std::vector<std::unique_ptr<Layer<T>>> ls;
  auto conv = [&](std::string name, int ic, int oc) {
    ConvSpec s;
    s.in_c = ic;
    s.out_c = oc;
    s.kernel = {3, 3, 3};
    s.stride = {1, 1, 1};
    s.pad = {1, 1, 1};
    return std::make_unique<Conv3d<T>>(std::move(name), s);
  };
  auto deconv = [&](std::string name, int ic, int oc, Dims3 stride, Dims3 pad,
                    Dims3 out_pad) {
    ConvSpec s;
    s.in_c = ic;
    s.out_c = oc;
    s.kernel = {3, 3, 3};
    s.stride = stride;
    s.pad = pad;
    s.out_pad = out_pad;
    return std::make_unique<ConvTranspose3d<T>>(std::move(name), s);
  };

  ls.push_back(conv("enc1.conv", 1, c1));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("enc1.bn", c1));
  ls.push_back(std::make_unique<ReLU<T>>("enc1.relu"));
  ls.push_back(std::make_unique<MaxPool3d<T>>("enc1.pool", Dims3{3, 2, 2}));
  ls.push_back(conv("enc2.conv", c1, c2));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("enc2.bn", c2));
  ls.push_back(std::make_unique<ReLU<T>>("enc2.relu"));
  ls.push_back(std::make_unique<MaxPool3d<T>>("enc2.pool", Dims3{1, 2, 2}));
  ls.push_back(deconv("dec1.deconv", c2, c2, Dims3{1, 1, 1}, Dims3{1, 1, 1},
                      Dims3{0, 0, 0}));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("dec1.bn", c2));
  ls.push_back(deconv("dec2.deconv", c2, c1, Dims3{1, 2, 2}, Dims3{1, 1, 1},
                      Dims3{0, 1, 1}));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("dec2.bn", c1));
  ls.push_back(deconv("dec3.deconv", c1, 1, Dims3{3, 2, 2}, Dims3{0, 1, 1},
                      Dims3{0, 1, 1}));
  ls.push_back(std::make_unique<Sigmoid<T>>("out.sigmoid"));

  ModelGraph<T> g(config, std::move(ls));
  seeded_init(g);
  g.shape_trace(kWindowShape);  // reject configs whose algebra fails
  if (g.output_shape(kWindowShape) != kWindowShape) {
    throw ShapeError("cae3d: output shape does not match input");
  }
  return g;
}

/// Frame-wise autoencoder: the same topology with unit temporal kernels
/// (1x3x3), so the time axis is never mixed and every frame is reconstructed
/// from its own spatial content.
template <typename T>
ModelGraph<T> build_cae2d(const ModelConfig& config) {
  detail::validate_model_config(config, ModelKind::cae2d);
  const int c1 = config.channels[0];
  const int c2 = config.channels[1];

  std::vector<std::unique_ptr<Layer<T>>> ls;
  auto conv = [&](std::string name, int ic, int oc) {
    ConvSpec s;
    s.in_c = ic;
    s.out_c = oc;
    s.kernel = {1, 3, 3};
    s.stride = {1, 1, 1};
    s.pad = {0, 1, 1};
    return std::make_unique<Conv3d<T>>(std::move(name), s);
  };
  auto deconv = [&](std::string name, int ic, int oc, Dims3 stride,
                    Dims3 out_pad) {
    ConvSpec s;
    s.in_c = ic;
    s.out_c = oc;
    s.kernel = {1, 3, 3};
    s.stride = stride;
    s.pad = {0, 1, 1};
    s.out_pad = out_pad;
    return std::make_unique<ConvTranspose3d<T>>(std::move(name), s);
  };

  ls.push_back(conv("enc1.conv", 1, c1));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("enc1.bn", c1));
  ls.push_back(std::make_unique<ReLU<T>>("enc1.relu"));
  ls.push_back(std::make_unique<MaxPool3d<T>>("enc1.pool", Dims3{1, 2, 2}));
  ls.push_back(conv("enc2.conv", c1, c2));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("enc2.bn", c2));
  ls.push_back(std::make_unique<ReLU<T>>("enc2.relu"));
  ls.push_back(std::make_unique<MaxPool3d<T>>("enc2.pool", Dims3{1, 2, 2}));
  ls.push_back(deconv("dec1.deconv", c2, c2, Dims3{1, 1, 1}, Dims3{0, 0, 0}));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("dec1.bn", c2));
  ls.push_back(deconv("dec2.deconv", c2, c1, Dims3{1, 2, 2}, Dims3{0, 1, 1}));
  ls.push_back(std::make_unique<BatchNorm3d<T>>("dec2.bn", c1));
  ls.push_back(deconv("dec3.deconv", c1, 1, Dims3{1, 2, 2}, Dims3{0, 1, 1}));
  ls.push_back(std::make_unique<Sigmoid<T>>("out.sigmoid"));

  ModelGraph<T> g(config, std::move(ls));
  seeded_init(g);
  g.shape_trace(kWindowShape);
  if (g.output_shape(kWindowShape) != kWindowShape) {
    throw ShapeError("cae2d: output shape does not match input");
  }
  return g;
}

template <typename T>
ModelGraph<T> build_model(const ModelConfig& config) {
  return config.kind == ModelKind::cae3d ? build_cae3d<T>(config)
                                         : build_cae2d<T>(config);
}

/// Seeds every layer's parameters from the config seed. Layer i draws from
/// an independent stream so identical seeds give bitwise identical weights.
template <typename T>
void seeded_init(ModelGraph<T>& g) {
  uint64_t li = 0;
  for (auto& l : g.layers()) {
    Rng rng(mix_seed(g.config().seed, li++));
    if (auto* c = dynamic_cast<Conv3d<T>*>(l.get())) {
      c->init_params(rng);
    } else if (auto* d = dynamic_cast<ConvTranspose3d<T>*>(l.get())) {
      d->init_params(rng);
    } else if (auto* b = dynamic_cast<BatchNorm3d<T>*>(l.get())) {
      b->init_params();
    }
  }
}

}  // namespace veil
