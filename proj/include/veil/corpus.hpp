#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "veil/annotations.hpp"
#include "veil/common.hpp"
#include "veil/synth.hpp"
#include "veil/videoio.hpp"

namespace veil::synth {

inline nlohmann::json scene_to_json(const SceneConfig& c) {
  nlohmann::json j;
  j["seed"] = c.seed;
  j["duration_seconds"] = c.duration;
  j["fps"] = c.fps;
  j["frame_width"] = c.width;
  j["frame_height"] = c.height;
  auto actors = nlohmann::json::array();
  for (const auto& a : c.actors) {
    nlohmann::json aj;
    aj["entry_time"] = a.entry_time;
    auto wps = nlohmann::json::array();
    for (const auto& [x, y] : a.waypoints) wps.push_back({x, y});
    aj["waypoints"] = std::move(wps);
    aj["speed"] = a.speed;
    aj["gait_amplitude"] = a.gait_amplitude;
    aj["gait_frequency"] = a.gait_frequency;
    aj["body_scale"] = a.body_scale;
    actors.push_back(std::move(aj));
  }
  j["actors"] = std::move(actors);
  auto events = nlohmann::json::array();
  for (const auto& e : c.events) {
    nlohmann::json ej;
    ej["kind"] = event_kind_name(e.kind);
    ej["actor"] = e.actor;
    ej["start"] = e.start;
    ej["end"] = e.end;
    events.push_back(std::move(ej));
  }
  j["events"] = std::move(events);
  return j;
}

inline SceneConfig scene_from_json(const nlohmann::json& j) {
  SceneConfig c;
  c.seed = j.value("seed", uint64_t{1});
  c.duration = j.value("duration_seconds", 60.0);
  c.fps = j.value("fps", 30);
  c.width = j.value("frame_width", 352);
  c.height = j.value("frame_height", 240);
  if (j.contains("actors")) {
    for (const auto& aj : j.at("actors")) {
      ActorSpec a;
      a.entry_time = aj.value("entry_time", 0.0);
      for (const auto& wp : aj.at("waypoints")) {
        a.waypoints.emplace_back(wp.at(0).get<double>(),
                                 wp.at(1).get<double>());
      }
      a.speed = aj.value("speed", 40.0);
      a.gait_amplitude = aj.value("gait_amplitude", 1.0);
      a.gait_frequency = aj.value("gait_frequency", 1.6);
      a.body_scale = aj.value("body_scale", 90.0);
      c.actors.push_back(std::move(a));
    }
  }
  if (j.contains("events")) {
    for (const auto& ej : j.at("events")) {
      AnomalyEvent e;
      e.kind = parse_event_kind(ej.at("kind").get<std::string>());
      e.actor = ej.value("actor", -1);
      e.start = ej.at("start").get<double>();
      e.end = ej.at("end").get<double>();
      c.events.push_back(e);
    }
  }
  validate_scene(c);
  return c;
}

/// Two walkers pacing the hallway; geometry chosen so the figures stay fully
/// inside the frame.
inline std::vector<ActorSpec> default_actors(int width, int height) {
  const double y1 = height * 215.0 / 240.0;
  const double y2 = height * 226.0 / 240.0;
  ActorSpec a;
  a.entry_time = 0.0;
  a.waypoints = {{width * 0.13, y1}, {width * 0.88, y1}};
  a.speed = 42.0;
  a.body_scale = height * 90.0 / 240.0;
  ActorSpec b;
  b.entry_time = 2.0;
  b.waypoints = {{width * 0.85, y2}, {width * 0.10, y2}};
  b.speed = 55.0;
  b.gait_frequency = 1.9;
  b.body_scale = height * 82.0 / 240.0;
  return {a, b};
}

/// Normal-only training scene (criterion: no anomaly events).
inline SceneConfig default_train_scene(uint64_t seed, double duration = 1000.0) {
  SceneConfig c;
  c.seed = seed;
  c.duration = duration;
  c.actors = default_actors(c.width, c.height);
  return c;
}

/// Test scene with one fall, one flail and one object strike, sized for
/// ~5% positive windows at the default 600 s duration.
inline SceneConfig default_test_scene(uint64_t seed, double duration = 600.0) {
  SceneConfig c;
  c.seed = seed;
  c.duration = duration;
  c.actors = default_actors(c.width, c.height);
  c.events = {
      {EventKind::fall, 0, 100.0, 110.0},
      {EventKind::flail, 1, 300.5, 310.5},
      {EventKind::object_strike, -1, 500.0, 510.0},
  };
  return c;
}

struct CorpusOptions {
  int annotation_stride = 2;  // pose runs on the 15 fps subsample
  bool compress_video = true;
  int zlib_level = 4;
};

/// Renders one scene into a dataset directory:
///   video.rawv                     RGB frame stream
///   annotations_openpose.jsonl     BODY-25 skeletons + person masks
///   annotations_detectron.jsonl    COCO-17 skeletons + person masks
///   labels.csv                     risk intervals (only when events exist)
///   meta.json                      scene config echo
inline void write_dataset(const SceneConfig& cfg, const std::string& dir,
                          const CorpusOptions& opts = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  SceneGenerator gen(cfg);
  const int64_t n = gen.frame_count();

  VideoWriter video(dir + "/video.rawv", cfg.width, cfg.height, 3, cfg.fps,
                    opts.compress_video, opts.zlib_level);
  AnnotationHeader op_hdr{"openpose", KeypointLayout::body25, cfg.width,
                          cfg.height, true};
  AnnotationHeader det_hdr{"detectron", KeypointLayout::coco17, cfg.width,
                           cfg.height, true};
  AnnotationWriter op_writer(dir + "/annotations_openpose.jsonl", op_hdr);
  AnnotationWriter det_writer(dir + "/annotations_detectron.jsonl", det_hdr);

  struct Encoded {
    std::vector<uint8_t> payload;
    std::string op_line, det_line;
    bool annotated = false;
  };

  const int64_t chunk = 96;
  std::vector<Encoded> buf;
  for (int64_t base = 0; base < n; base += chunk) {
    const int64_t cnt = std::min(chunk, n - base);
    buf.assign(static_cast<size_t>(cnt), Encoded{});
    parallel_for(cnt, [&](int64_t b, int64_t e) {
      for (int64_t i = b; i < e; ++i) {
        const int64_t f = base + i;
        RenderedFrame rf = gen.render(f);
        Encoded& enc = buf[static_cast<size_t>(i)];
        enc.payload = opts.compress_video
                          ? veil::detail::zlib_deflate(rf.rgb.px,
                                                         opts.zlib_level)
                          : rf.rgb.px;
        if (f % opts.annotation_stride == 0) {
          enc.annotated = true;
          FrameAnnotation op;
          op.frame_index = f;
          op.persons = rf.body25;
          op.masks = rf.masks;
          enc.op_line = AnnotationWriter::serialize(op);
          FrameAnnotation det;
          det.frame_index = f;
          det.persons = rf.coco17;
          det.masks = std::move(rf.masks);
          enc.det_line = AnnotationWriter::serialize(det);
        }
      }
    });
    for (const Encoded& enc : buf) {
      video.add_payload(enc.payload);
      if (enc.annotated) {
        op_writer.write_line(enc.op_line);
        det_writer.write_line(enc.det_line);
      }
    }
  }
  video.finalize();
  op_writer.flush();
  det_writer.flush();

  if (!cfg.events.empty()) {
    std::ofstream labels(dir + "/labels.csv");
    if (!labels) throw IoError("cannot write " + dir + "/labels.csv");
    labels << "start_seconds,end_seconds\n";
    for (const auto& e : cfg.events) {
      labels << veil::detail::format_msg("%.3f,%.3f\n", e.start, e.end);
    }
  }

  std::ofstream meta(dir + "/meta.json");
  if (!meta) throw IoError("cannot write " + dir + "/meta.json");
  nlohmann::json mj;
  mj["scene"] = scene_to_json(cfg);
  mj["frame_count"] = n;
  mj["person_sentinel"] = kPersonSentinel;
  meta << mj.dump(2) << "\n";
}

/// Writes the train (normal-only) and test datasets under out_dir/train and
/// out_dir/test. The training scene must not contain anomaly events.
inline void generate_corpus(const SceneConfig& train_cfg,
                            const SceneConfig& test_cfg,
                            const std::string& out_dir,
                            const CorpusOptions& opts = {}) {
  if (!train_cfg.events.empty()) {
    throw ConfigError(
        "training scene must contain only normal activity (no events)");
  }
  write_dataset(train_cfg, out_dir + "/train", opts);
  write_dataset(test_cfg, out_dir + "/test", opts);
}

}  // namespace veil::synth
