// veil: privacy-protecting video anomaly detection pipeline.
//
// Subcommands chain synthetic data generation, privacy preprocessing, CAE
// training, reconstruction-error scoring and ROC/PR evaluation from a single
// JSON run config. Worker count comes from the VEIL_THREADS env var.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "veil/veil.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

void run_synth(const veil::RunConfig& cfg) {
  veil::synth::generate_corpus(cfg.synth_train, cfg.synth_test,
                               cfg.data_dir());
  const auto train_frames =
      veil::synth::SceneGenerator(cfg.synth_train).frame_count();
  const auto test_frames =
      veil::synth::SceneGenerator(cfg.synth_test).frame_count();
  std::printf("synth: wrote %s (train %lld frames, test %lld frames)\n",
              cfg.data_dir().c_str(), static_cast<long long>(train_frames),
              static_cast<long long>(test_frames));
}

void run_preprocess(const veil::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out + "/windows");
  for (const std::string split : {"train", "test"}) {
    const std::string video = cfg.dataset_dir(split) + "/video.rawv";
    auto frames = veil::open_frames(video, cfg.preprocess.fps_in);
    const auto res = veil::preprocess_dataset(
        *frames, veil::annotations_path_for(cfg, split),
        cfg.windows_path(split), cfg.preprocess);
    std::printf("preprocess: %s -> %lld windows (%s, %lld frames dropped)\n",
                split.c_str(), static_cast<long long>(res.windows),
                veil::variant_name(cfg.variant),
                static_cast<long long>(res.frames_dropped));
  }
}

void run_train(const veil::RunConfig& cfg) {
  veil::WindowStoreReader store(cfg.windows_path("train"));
  if (store.header().variant != cfg.variant) {
    throw veil::Error(std::string("train: window store variant ") +
                      veil::variant_name(store.header().variant) +
                      " does not match configured variant " +
                      veil::variant_name(cfg.variant));
  }
  const auto windows = store.read_all();
  auto model = veil::build_model<float>(cfg.model);
  veil::Adam<float> opt(cfg.train.lr);
  veil::TrainLogWriter log(cfg.train_log_path(), cfg.config_hash, cfg.seed);
  const auto result = veil::train(
      model, opt, windows, {}, cfg.train,
      [&](int epoch, double mean_loss, double secs) {
        log.log(epoch, mean_loss, secs);
        std::printf("train: epoch %d/%d mean_loss=%.6g (%.1fs)\n", epoch,
                    cfg.train.epochs, mean_loss, secs);
        std::fflush(stdout);
      });
  veil::CheckpointMeta meta;
  meta.variant = cfg.variant;
  meta.config_hash = cfg.config_hash;
  veil::save_checkpoint(cfg.checkpoint_path(), model, opt, meta);
  std::printf("train: %zu windows, %d epochs, final mean_loss=%.6g -> %s\n",
              windows.size(), cfg.train.epochs,
              result.epoch_mean_loss.back(), cfg.checkpoint_path().c_str());
}

void run_score(const veil::RunConfig& cfg) {
  auto loaded = veil::load_checkpoint(cfg.checkpoint_path());
  veil::WindowStoreReader store(cfg.windows_path("test"));
  if (store.header().variant != loaded.meta.variant) {
    throw veil::Error(std::string("score: checkpoint variant ") +
                      veil::variant_name(loaded.meta.variant) +
                      " does not match window store variant " +
                      veil::variant_name(store.header().variant));
  }
  const auto windows = store.read_all();
  const auto scored =
      veil::score_windows(loaded.model, windows, store.metas());
  veil::write_scores_csv(cfg.scores_path(), scored, cfg.config_hash,
                         cfg.seed);
  double mn = 0.0, mx = 0.0;
  if (!scored.empty()) {
    mn = mx = scored[0].score;
    for (const auto& s : scored) {
      mn = std::min(mn, s.score);
      mx = std::max(mx, s.score);
    }
  }
  std::printf("score: %zu windows -> %s (score range [%.6g, %.6g])\n",
              scored.size(), cfg.scores_path().c_str(), mn, mx);
}

void run_eval(const veil::RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.scores_path())) {
    throw veil::ConfigError("eval: scores file missing: " +
                            cfg.scores_path() + " (run 'score' first)");
  }
  if (!fs::exists(cfg.labels_path())) {
    throw veil::ConfigError("eval: labels file missing: " +
                            cfg.labels_path());
  }
  auto sf = veil::read_scores_csv(cfg.scores_path());
  const auto intervals = veil::read_intervals_csv(cfg.labels_path());
  veil::label_windows(sf.scored, intervals, cfg.eval_overlap_threshold);
  const auto report = veil::compute_metrics(sf.scored, sf.config_hash);
  veil::write_report(report, cfg.metrics_path(), cfg.roc_csv_path(),
                     cfg.pr_csv_path());
  std::printf(
      "eval: auc_roc=%.4f auc_pr=%.4f prevalence=%.4f (P=%lld, N=%lld)\n",
      report.auc_roc, report.auc_pr, report.prevalence,
      static_cast<long long>(report.positives),
      static_cast<long long>(report.negatives));
}

void run_report(const veil::RunConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.metrics_path())) {
    throw veil::ConfigError("report: metrics file missing: " +
                            cfg.metrics_path() + " (run 'eval' first)");
  }
  const auto report = veil::read_report_json(cfg.metrics_path());
  const auto sf = veil::read_scores_csv(cfg.scores_path());
  if (sf.config_hash != report.config_hash) {
    throw veil::Error(
        "report: mixed provenance: scores config_hash " +
        veil::hash_hex(sf.config_hash) + " vs metrics config_hash " +
        veil::hash_hex(report.config_hash));
  }
  std::printf("run        : %s\n", cfg.out.c_str());
  std::printf("config hash: %s\n", veil::hash_hex(report.config_hash).c_str());
  std::printf("windows    : %lld (%lld risk, %lld normal)\n",
              static_cast<long long>(report.positives + report.negatives),
              static_cast<long long>(report.positives),
              static_cast<long long>(report.negatives));
  std::printf("prevalence : %.4f (PR baseline of a random classifier)\n",
              report.prevalence);
  std::printf("AUC(ROC)   : %.4f\n", report.auc_roc);
  std::printf("AUC(PR)    : %.4f\n", report.auc_pr);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "veil: privacy-protecting video anomaly detection\n"
      "Pipeline: synth -> preprocess -> train -> score -> eval -> report"};
  app.require_subcommand(1);

  std::string config_path;
  veil::RunOverrides ov;
  std::string out, variant, model;
  uint64_t seed = 0;
  int epochs = 0;

  app.add_option("-c,--config", config_path,
                 "JSON run config (defaults used when omitted)");
  auto* out_opt = app.add_option("-o,--out", out, "output directory");
  auto* var_opt = app.add_option(
      "--variant", variant,
      "input variant: rgb|op_skel_nobg|op_skel_bg|det_skel_nobg|"
      "det_skel_bg|mask_nobg|mask_bg");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  auto* ep_opt = app.add_option("--epochs", epochs, "training epochs");
  auto* model_opt =
      app.add_option("--model", model, "model kind: cae3d|cae2d");

  const char* names[] = {"synth", "preprocess", "train", "score",
                         "eval",  "report",     "all"};
  const char* descs[] = {
      "generate the synthetic corpus",
      "render privacy variants into window stores",
      "train the autoencoder on normal windows",
      "score test windows by reconstruction error",
      "label windows and compute ROC/PR metrics",
      "print a summary of an evaluated run",
      "run every stage in order"};
  for (int i = 0; i < 7; ++i) {
    app.add_subcommand(names[i], descs[i])->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*out_opt) ov.out = out;
    if (*var_opt) ov.variant = variant;
    if (*seed_opt) ov.seed = seed;
    if (*ep_opt) ov.epochs = epochs;
    if (*model_opt) ov.model = model;
    const veil::RunConfig cfg = veil::load_run_config(config_path, ov);
    std::filesystem::create_directories(cfg.out);

    const std::string stage = app.get_subcommands().front()->get_name();
    if (stage == "synth" || stage == "all") run_synth(cfg);
    if (stage == "preprocess" || stage == "all") run_preprocess(cfg);
    if (stage == "train" || stage == "all") run_train(cfg);
    if (stage == "score" || stage == "all") run_score(cfg);
    if (stage == "eval" || stage == "all") run_eval(cfg);
    if (stage == "report") run_report(cfg);
    return kExitOk;
  } catch (const veil::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
