#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "veil/common.hpp"
#include "veil/corpus.hpp"
#include "veil/model.hpp"
#include "veil/pipeline.hpp"
#include "veil/trainer.hpp"
#include "veil/variants.hpp"

namespace veil {

/// Optional command-line overrides; flags win over config-file values.
struct RunOverrides {
  std::optional<std::string> out;
  std::optional<std::string> variant;
  std::optional<uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> model;
};

/// One resolved configuration for the whole pipeline. All stage seeds are
/// derived from the master seed unless explicitly pinned in the file, and
/// the canonical JSON of everything except the output path is hashed into
/// config_hash, which every artifact records.
struct RunConfig {
  uint64_t seed = 7;
  std::string out = "runs/demo";
  VariantKind variant = VariantKind::mask_bg;
  ModelConfig model;
  synth::SceneConfig synth_train;
  synth::SceneConfig synth_test;
  PreprocessConfig preprocess;
  TrainConfig train;
  double eval_overlap_threshold = 0.5;

  nlohmann::json resolved;  // canonical config (without "out")
  uint64_t config_hash = 0;

  // Artifact layout under the output directory.
  std::string data_dir() const { return out + "/data"; }
  std::string dataset_dir(const std::string& split) const {
    return data_dir() + "/" + split;
  }
  std::string windows_path(const std::string& split) const {
    return out + "/windows/" + split + "." + variant_name(variant) +
           ".veilwin";
  }
  std::string checkpoint_path() const { return out + "/checkpoint.veilckpt"; }
  std::string train_log_path() const { return out + "/train_log.jsonl"; }
  std::string scores_path() const { return out + "/scores.csv"; }
  std::string metrics_path() const { return out + "/metrics.json"; }
  std::string roc_csv_path() const { return out + "/roc.csv"; }
  std::string pr_csv_path() const { return out + "/pr.csv"; }
  std::string labels_path() const {
    return dataset_dir("test") + "/labels.csv";
  }
};

inline RunConfig load_run_config(const std::string& config_path,
                                 const RunOverrides& ov = {}) {
  nlohmann::json j = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot open config file " + config_path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(config_path + ": invalid JSON: " + e.what());
    }
  }

  RunConfig cfg;
  try {
    cfg.seed = ov.seed ? *ov.seed : j.value("seed", uint64_t{7});
    cfg.out = ov.out ? *ov.out : j.value("out", std::string("runs/demo"));
    cfg.variant = parse_variant(
        ov.variant ? *ov.variant : j.value("variant", std::string("mask_bg")));

    nlohmann::json mj = j.value("model", nlohmann::json::object());
    cfg.model.kind = parse_model_kind(
        ov.model ? *ov.model : mj.value("kind", std::string("cae2d")));
    if (mj.contains("channels")) {
      cfg.model.channels = mj.at("channels").get<std::vector<int>>();
    }
    cfg.model.seed = mj.value("seed", mix_seed(cfg.seed, 201));

    nlohmann::json sj = j.value("synth", nlohmann::json::object());
    if (sj.contains("train")) {
      nlohmann::json tj = sj.at("train");
      if (!tj.contains("seed")) tj["seed"] = mix_seed(cfg.seed, 101);
      cfg.synth_train = synth::scene_from_json(tj);
    } else {
      cfg.synth_train = synth::default_train_scene(mix_seed(cfg.seed, 101));
    }
    if (sj.contains("test")) {
      nlohmann::json tj = sj.at("test");
      if (!tj.contains("seed")) tj["seed"] = mix_seed(cfg.seed, 102);
      cfg.synth_test = synth::scene_from_json(tj);
    } else {
      cfg.synth_test = synth::default_test_scene(mix_seed(cfg.seed, 102));
    }

    nlohmann::json pj = j.value("preprocess", nlohmann::json::object());
    cfg.preprocess.variant = cfg.variant;
    cfg.preprocess.style.confidence_threshold =
        pj.value("confidence_threshold", 0.1f);
    cfg.preprocess.style.line_thickness = pj.value("line_thickness", 2);
    cfg.preprocess.style.joint_radius = pj.value("joint_radius", 2);
    cfg.preprocess.background_samples = pj.value("background_samples", 200);
    cfg.preprocess.fps_in = pj.value("fps_in", 30);
    cfg.preprocess.seed = cfg.seed;

    nlohmann::json tj = j.value("train", nlohmann::json::object());
    cfg.train.epochs = ov.epochs ? *ov.epochs : tj.value("epochs", 70);
    cfg.train.lr = tj.value("learning_rate", 1e-3);
    cfg.train.batch_size = tj.value("batch_size", 5);
    cfg.train.shuffle = tj.value("shuffle", true);
    cfg.train.seed = tj.value("seed", mix_seed(cfg.seed, 301));

    nlohmann::json ej = j.value("eval", nlohmann::json::object());
    cfg.eval_overlap_threshold = ej.value("overlap_threshold", 0.5);
    if (!(cfg.eval_overlap_threshold > 0.0) ||
        cfg.eval_overlap_threshold > 1.0) {
      throw ConfigError("eval.overlap_threshold must be in (0, 1]");
    }
    validate_train_config(cfg.train);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config error: " + std::string(e.what()));
  }

  // Canonical resolved config; nlohmann::json orders keys, so the dump is
  // stable and its hash is too.
  nlohmann::json r;
  r["seed"] = cfg.seed;
  r["variant"] = variant_name(cfg.variant);
  r["model"] = {{"kind", model_kind_name(cfg.model.kind)},
                {"channels", cfg.model.channels},
                {"seed", cfg.model.seed}};
  r["synth"] = {{"train", synth::scene_to_json(cfg.synth_train)},
                {"test", synth::scene_to_json(cfg.synth_test)}};
  r["preprocess"] = {
      {"confidence_threshold", cfg.preprocess.style.confidence_threshold},
      {"line_thickness", cfg.preprocess.style.line_thickness},
      {"joint_radius", cfg.preprocess.style.joint_radius},
      {"background_samples", cfg.preprocess.background_samples},
      {"fps_in", cfg.preprocess.fps_in}};
  r["train"] = {{"epochs", cfg.train.epochs},
                {"learning_rate", cfg.train.lr},
                {"batch_size", cfg.train.batch_size},
                {"shuffle", cfg.train.shuffle},
                {"seed", cfg.train.seed}};
  r["eval"] = {{"overlap_threshold", cfg.eval_overlap_threshold}};
  cfg.resolved = r;
  cfg.config_hash = fnv1a64(r.dump());
  cfg.preprocess.config_hash = cfg.config_hash;
  return cfg;
}

/// Annotation stream consumed by a variant within a dataset directory.
inline std::string annotations_path_for(const RunConfig& cfg,
                                        const std::string& split) {
  switch (cfg.variant) {
    case VariantKind::rgb:
      return "";
    case VariantKind::op_skel_nobg:
    case VariantKind::op_skel_bg:
      return cfg.dataset_dir(split) + "/annotations_openpose.jsonl";
    default:
      return cfg.dataset_dir(split) + "/annotations_detectron.jsonl";
  }
}

}  // namespace veil
