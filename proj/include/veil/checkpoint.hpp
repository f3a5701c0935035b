#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "veil/adam.hpp"
#include "veil/binio.hpp"
#include "veil/common.hpp"
#include "veil/layers.hpp"
#include "veil/model.hpp"
#include "veil/variants.hpp"

namespace veil {

// ---------------------------------------------------------------------------
// Checkpoint (.veilckpt)
//
//   magic "VEILCKP1", u32 version
//   model: u32 kind, u32 n_channels + u32[] channels, u64 model seed
//   u32 variant, u64 config_hash, u64 param_count
//   adam:  u64 step, f64 lr/beta1/beta2/eps
//   per parameter (name, value[], m[], v[]) as float32
//   per batchnorm layer (name, running_mean[], running_var[]) as float32
//
// Raw float bits round-trip exactly, so a reloaded model scores bitwise
// identically to the one that was saved.
// ---------------------------------------------------------------------------

inline constexpr char kCkptMagic[8] = {'V', 'E', 'I', 'L', 'C', 'K', 'P', '1'};

struct CheckpointMeta {
  VariantKind variant = VariantKind::rgb;
  uint64_t config_hash = 0;
};

inline void save_checkpoint(const std::string& path, ModelGraph<float>& model,
                            const Adam<float>& opt, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_bytes(out, kCkptMagic, 8);
  write_pod<uint32_t>(out, 1);
  const ModelConfig& cfg = model.config();
  write_pod<uint32_t>(out, static_cast<uint32_t>(cfg.kind));
  write_pod<uint32_t>(out, static_cast<uint32_t>(cfg.channels.size()));
  for (const int c : cfg.channels) {
    write_pod<uint32_t>(out, static_cast<uint32_t>(c));
  }
  write_pod<uint64_t>(out, cfg.seed);
  write_pod<uint32_t>(out, static_cast<uint32_t>(meta.variant));
  write_pod<uint64_t>(out, meta.config_hash);
  write_pod<uint64_t>(out, static_cast<uint64_t>(model.param_count()));
  write_pod<uint64_t>(out, static_cast<uint64_t>(opt.step_count()));
  write_pod<double>(out, opt.lr());
  write_pod<double>(out, opt.beta1());
  write_pod<double>(out, opt.beta2());
  write_pod<double>(out, opt.eps());

  const auto params = model.params();
  write_pod<uint32_t>(out, static_cast<uint32_t>(params.size()));
  for (const Param<float>* p : params) {
    write_str(out, p->name);
    write_vec(out, p->value);
    write_vec(out, p->m);
    write_vec(out, p->v);
  }

  std::vector<BatchNorm3d<float>*> bns;
  for (const auto& l : model.layers()) {
    if (auto* bn = dynamic_cast<BatchNorm3d<float>*>(l.get())) {
      bns.push_back(bn);
    }
  }
  write_pod<uint32_t>(out, static_cast<uint32_t>(bns.size()));
  for (BatchNorm3d<float>* bn : bns) {
    write_str(out, bn->name());
    write_vec(out, bn->running_mean());
    write_vec(out, bn->running_var());
  }
  out.flush();
  if (!out) throw IoError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
  ModelGraph<float> model;
  Adam<float> opt;
  CheckpointMeta meta;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  read_bytes(in, magic, 8, "checkpoint magic");
  if (std::memcmp(magic, kCkptMagic, 8) != 0) {
    throw IoError(path + ": not a veil checkpoint");
  }
  const uint32_t version = read_pod<uint32_t>(in, "version");
  if (version != 1) {
    throw IoError(path + ": unsupported checkpoint version " +
                  std::to_string(version));
  }
  ModelConfig cfg;
  cfg.kind = static_cast<ModelKind>(read_pod<uint32_t>(in, "model kind"));
  const uint32_t nch = read_pod<uint32_t>(in, "channel count");
  if (nch > 16) throw IoError(path + ": implausible channel list");
  cfg.channels.clear();
  for (uint32_t i = 0; i < nch; ++i) {
    cfg.channels.push_back(static_cast<int>(read_pod<uint32_t>(in, "channel")));
  }
  cfg.seed = read_pod<uint64_t>(in, "model seed");
  CheckpointMeta meta;
  meta.variant = static_cast<VariantKind>(read_pod<uint32_t>(in, "variant"));
  meta.config_hash = read_pod<uint64_t>(in, "config hash");
  const uint64_t want_params = read_pod<uint64_t>(in, "param count");

  ModelGraph<float> model = build_model<float>(cfg);
  if (static_cast<uint64_t>(model.param_count()) != want_params) {
    throw IoError(path + ": parameter count mismatch (config rebuilds " +
                  std::to_string(model.param_count()) + ", checkpoint has " +
                  std::to_string(want_params) + ")");
  }

  const auto step = static_cast<int64_t>(read_pod<uint64_t>(in, "adam step"));
  const double lr = read_pod<double>(in, "lr");
  const double b1 = read_pod<double>(in, "beta1");
  const double b2 = read_pod<double>(in, "beta2");
  const double eps = read_pod<double>(in, "eps");
  Adam<float> opt(lr, b1, b2, eps);
  opt.set_step_count(step);

  const uint32_t np = read_pod<uint32_t>(in, "param blob count");
  auto params = model.params();
  if (np != params.size()) {
    throw IoError(path + ": parameter blob count mismatch");
  }
  for (Param<float>* p : params) {
    const std::string name = read_str(in, "param name");
    if (name != p->name) {
      throw IoError(path + ": parameter order mismatch, expected " + p->name +
                    " got " + name);
    }
    auto value = read_vec<float>(in, "param value");
    auto m = read_vec<float>(in, "param m");
    auto v = read_vec<float>(in, "param v");
    if (value.size() != p->value.size() || m.size() != p->m.size() ||
        v.size() != p->v.size()) {
      throw IoError(path + ": parameter size mismatch for " + name);
    }
    p->value = std::move(value);
    p->m = std::move(m);
    p->v = std::move(v);
  }

  const uint32_t nbn = read_pod<uint32_t>(in, "batchnorm count");
  std::vector<BatchNorm3d<float>*> bns;
  for (const auto& l : model.layers()) {
    if (auto* bn = dynamic_cast<BatchNorm3d<float>*>(l.get())) {
      bns.push_back(bn);
    }
  }
  if (nbn != bns.size()) {
    throw IoError(path + ": batchnorm layer count mismatch");
  }
  for (BatchNorm3d<float>* bn : bns) {
    const std::string name = read_str(in, "batchnorm name");
    if (name != bn->name()) {
      throw IoError(path + ": batchnorm order mismatch");
    }
    auto rm = read_vec<float>(in, "running mean");
    auto rv = read_vec<float>(in, "running var");
    if (rm.size() != bn->running_mean().size() ||
        rv.size() != bn->running_var().size()) {
      throw IoError(path + ": running stats size mismatch for " + name);
    }
    bn->running_mean() = std::move(rm);
    bn->running_var() = std::move(rv);
  }
  return LoadedCheckpoint{std::move(model), opt, meta};
}

}  // namespace veil
