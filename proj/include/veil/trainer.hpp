#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "veil/adam.hpp"
#include "veil/common.hpp"
#include "veil/loss.hpp"
#include "veil/metrics.hpp"
#include "veil/model.hpp"
#include "veil/windows.hpp"

namespace veil {

struct TrainConfig {
  int epochs = 70;
  double lr = 1e-3;
  int batch_size = 5;
  uint64_t seed = 0;
  bool shuffle = true;
};

inline void validate_train_config(const TrainConfig& c) {
  if (c.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(c.lr > 0.0)) throw ConfigError("train: learning rate must be > 0");
}

struct TrainResult {
  std::vector<double> epoch_mean_loss;
};

/// Trains the model on normal-activity windows: shuffled batches, Adam on
/// the windowed MSE objective, a fixed number of epochs. Windows carrying a
/// risk label are refused; training data must be normal-only.
template <typename ProgressFn>
TrainResult train(ModelGraph<float>& model, Adam<float>& opt,
                  const std::vector<Tensor4<float>>& windows,
                  const std::vector<WindowLabel>& labels,
                  const TrainConfig& cfg, ProgressFn&& on_epoch) {
  validate_train_config(cfg);
  if (windows.empty()) throw Error("train: empty training set");
  if (!labels.empty()) {
    if (labels.size() != windows.size()) {
      throw Error("train: labels/windows size mismatch");
    }
    for (size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == WindowLabel::risk) {
        throw Error("train: window " + std::to_string(i) +
                    " carries a risk label; training data must be normal-only");
      }
    }
  }

  TrainResult result;
  std::vector<size_t> order(windows.size());
  std::iota(order.begin(), order.end(), size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.shuffle) {
      Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
      std::iota(order.begin(), order.end(), size_t{0});
      veil::shuffle(order, rng);
    }
    double loss_sum = 0.0;
    for (size_t base = 0; base < order.size();
         base += static_cast<size_t>(cfg.batch_size)) {
      const size_t cnt = std::min(static_cast<size_t>(cfg.batch_size),
                                  order.size() - base);
      Batch<float> batch;
      batch.reserve(cnt);
      for (size_t i = 0; i < cnt; ++i) {
        batch.push_back(windows[order[base + i]]);
      }
      Batch<float> recon = model.forward(batch, Mode::train);
      Batch<float> grad(cnt);
      double batch_loss = 0.0;
      for (size_t i = 0; i < cnt; ++i) {
        batch_loss += window_mse(batch[i], recon[i]);
        grad[i] = window_mse_grad(batch[i], recon[i],
                                  1.0 / static_cast<double>(cnt));
      }
      loss_sum += batch_loss;
      if (!std::isfinite(batch_loss)) {
        throw Error(detail::format_msg(
            "train: non-finite loss in epoch %d batch starting at %zu", epoch,
            base));
      }
      model.zero_grad();
      model.backward(grad);
      opt.step(model.params());
    }
    const double mean_loss = loss_sum / static_cast<double>(order.size());
    result.epoch_mean_loss.push_back(mean_loss);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    on_epoch(epoch, mean_loss, secs);
  }
  model.clear_caches();
  return result;
}

inline TrainResult train(ModelGraph<float>& model, Adam<float>& opt,
                         const std::vector<Tensor4<float>>& windows,
                         const std::vector<WindowLabel>& labels,
                         const TrainConfig& cfg) {
  return train(model, opt, windows, labels, cfg,
               [](int, double, double) {});
}

/// JSON-lines training log: a provenance record, then one line per epoch
/// {"epoch":..,"mean_loss":..,"wall_seconds":..}.
class TrainLogWriter {
 public:
  TrainLogWriter(const std::string& path, uint64_t config_hash, uint64_t seed)
      : out_(path) {
    if (!out_) throw IoError("cannot open train log " + path);
    nlohmann::json j;
    j["config_hash"] = hash_hex(config_hash);
    j["seed"] = seed;
    out_ << j.dump() << "\n";
  }
  void log(int epoch, double mean_loss, double wall_seconds) {
    nlohmann::json j;
    j["epoch"] = epoch;
    j["mean_loss"] = mean_loss;
    j["wall_seconds"] = wall_seconds;
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Scores windows with eval-mode forwards in input order; the score is the
/// windowed MSE between input and reconstruction.
inline std::vector<ScoredWindow> score_windows(
    ModelGraph<float>& model, const std::vector<Tensor4<float>>& windows,
    const std::vector<WindowMeta>& metas) {
  if (windows.size() != metas.size()) {
    throw Error("score: windows/metas size mismatch");
  }
  std::vector<ScoredWindow> out;
  out.reserve(windows.size());
  for (size_t i = 0; i < windows.size(); ++i) {
    Batch<float> batch{windows[i]};
    Batch<float> recon = model.forward(batch, Mode::eval);
    ScoredWindow sw;
    sw.index = metas[i].index;
    sw.start_time = metas[i].start_time;
    sw.end_time = metas[i].end_time;
    sw.score = window_mse(batch[0], recon[0]);
    sw.label = WindowLabel::unlabeled;
    out.push_back(sw);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scores CSV: a '#' provenance comment, then
// window_index,start_time,end_time,score,label
// ---------------------------------------------------------------------------

inline void write_scores_csv(const std::string& path,
                             const std::vector<ScoredWindow>& scored,
                             uint64_t config_hash, uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write scores file " + path);
  out << "# veil scores config_hash=" << hash_hex(config_hash)
      << " seed=" << seed << "\n";
  out << "window_index,start_time,end_time,score,label\n";
  for (const auto& s : scored) {
    out << s.index << ","
        << detail::format_msg("%.3f,%.3f,%.17g", s.start_time, s.end_time,
                              s.score)
        << "," << label_name(s.label) << "\n";
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path);
}

struct ScoresFile {
  std::vector<ScoredWindow> scored;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

inline ScoresFile read_scores_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scores file " + path);
  ScoresFile sf;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto hpos = line.find("config_hash=");
      if (hpos != std::string::npos) {
        sf.config_hash = std::stoull(line.substr(hpos + 12, 16), nullptr, 16);
      }
      const auto spos = line.find("seed=");
      if (spos != std::string::npos) {
        sf.seed = std::stoull(line.substr(spos + 5), nullptr, 10);
      }
      continue;
    }
    if (!header_seen) {
      if (line != "window_index,start_time,end_time,score,label") {
        throw IoError(path + ": bad scores header '" + line + "'");
      }
      header_seen = true;
      continue;
    }
    ScoredWindow s;
    long long idx = 0;
    char label_buf[32] = {0};
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%31s", &idx,
                    &s.start_time, &s.end_time, &s.score, label_buf) != 5) {
      throw IoError(path + ": bad scores row '" + line + "'");
    }
    s.index = idx;
    s.label = parse_label(label_buf);
    sf.scored.push_back(s);
  }
  if (!header_seen) throw IoError(path + ": missing scores header");
  return sf;
}

}  // namespace veil
