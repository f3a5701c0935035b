#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "veil/annotations.hpp"
#include "veil/common.hpp"
#include "veil/image.hpp"
#include "veil/videoio.hpp"

namespace veil::synth {

/// Every person pixel in generated frames carries this exact intensity (on
/// all RGB channels). No background or overlay element ever uses it, so a
/// privacy-transformed frame must not contain it anywhere.
inline constexpr uint8_t kPersonSentinel = 201;

struct ActorSpec {
  double entry_time = 0.0;
  std::vector<std::pair<double, double>> waypoints;  // (x, floor y) in px
  double speed = 40.0;                               // px/s along the path
  double gait_amplitude = 1.0;
  double gait_frequency = 1.6;  // strides per second
  double body_scale = 90.0;     // standing height in px
};

enum class EventKind { fall, flail, object_strike };

inline const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::fall: return "fall";
    case EventKind::flail: return "flail";
    case EventKind::object_strike: return "object_strike";
  }
  return "?";
}

inline EventKind parse_event_kind(const std::string& s) {
  if (s == "fall") return EventKind::fall;
  if (s == "flail") return EventKind::flail;
  if (s == "object_strike") return EventKind::object_strike;
  throw ConfigError("unknown event kind '" + s + "'");
}

struct AnomalyEvent {
  EventKind kind = EventKind::fall;
  int actor = -1;  // required for fall/flail; ignored for object_strike
  double start = 0.0;
  double end = 0.0;
};

struct SceneConfig {
  uint64_t seed = 1;
  double duration = 60.0;  // seconds
  int fps = 30;
  int width = 352;
  int height = 240;
  std::vector<ActorSpec> actors;
  std::vector<AnomalyEvent> events;
};

inline void validate_scene(const SceneConfig& cfg) {
  if (cfg.duration <= 0.0) throw ConfigError("scene duration must be > 0");
  if (cfg.fps < 1) throw ConfigError("scene fps must be >= 1");
  if (cfg.width < 32 || cfg.height < 32) {
    throw ConfigError("scene frame size too small");
  }
  for (const auto& a : cfg.actors) {
    if (a.speed < 0.0) throw ConfigError("actor speed must be >= 0");
    if (a.body_scale <= 0.0) throw ConfigError("actor body_scale must be > 0");
    if (a.waypoints.empty()) throw ConfigError("actor needs >= 1 waypoint");
  }
  for (const auto& e : cfg.events) {
    if (!(e.start < e.end)) throw ConfigError("event start must be < end");
    if (e.start < 0.0 || e.end > cfg.duration) {
      throw ConfigError("event interval outside scene duration");
    }
    if (e.kind != EventKind::object_strike) {
      if (e.actor < 0 || e.actor >= static_cast<int>(cfg.actors.size())) {
        throw ConfigError("event actor id out of range");
      }
    }
  }
  // Two events driving the same actor (or the scene object) must not overlap.
  for (size_t i = 0; i < cfg.events.size(); ++i) {
    for (size_t j = i + 1; j < cfg.events.size(); ++j) {
      const auto& a = cfg.events[i];
      const auto& b = cfg.events[j];
      const bool same_target =
          (a.kind == EventKind::object_strike &&
           b.kind == EventKind::object_strike) ||
          (a.kind != EventKind::object_strike &&
           b.kind != EventKind::object_strike && a.actor == b.actor);
      if (same_target && a.start < b.end && b.start < a.end) {
        throw ConfigError("overlapping events on one actor/object");
      }
    }
  }
}

// COCO-17 joint indices.
enum Coco : int {
  kNose = 0, kLEye, kREye, kLEar, kREar, kLSho, kRSho, kLElb, kRElb,
  kLWri, kRWri, kLHip, kRHip, kLKnee, kRKnee, kLAnk, kRAnk
};

struct Pt {
  double x = 0.0;
  double y = 0.0;
};

struct RenderedFrame {
  ImageU8 rgb;                       // 3-channel scene
  std::vector<PersonKeypoints> coco17;
  std::vector<PersonKeypoints> body25;
  std::vector<PersonMask> masks;     // one per visible person
};

namespace detail {

inline double h01(uint64_t seed, uint64_t a, uint64_t b = 0) {
  uint64_t s = mix_seed(seed, (a << 20) ^ b);
  return static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53;
}

inline double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

}  // namespace detail

/// Deterministic hallway scene: a static wall/floor background with a door
/// and a cart, plus articulated stick-figure walkers. Falls collapse the
/// figure to a prone pose within 0.5 s, flailing swings the arms at high
/// frequency and amplitude, and an object strike abruptly displaces the
/// cart for the duration of the event. Frames are a pure function of
/// (config, frame index).
class SceneGenerator {
 public:
  explicit SceneGenerator(SceneConfig cfg) : cfg_(std::move(cfg)) {
    validate_scene(cfg_);
    // Per-actor deterministic jitter.
    for (size_t i = 0; i < cfg_.actors.size(); ++i) {
      phase_.push_back(detail::h01(cfg_.seed, i, 11) * 6.283185307179586);
      speed_jitter_.push_back(0.9 + 0.2 * detail::h01(cfg_.seed, i, 13));
    }
    cart_x_ = cfg_.width * 500 / 704;  // static cart position
    cart_w_ = cfg_.width * 50 / 352;
  }

  const SceneConfig& config() const { return cfg_; }

  int64_t frame_count() const {
    return static_cast<int64_t>(std::llround(cfg_.duration * cfg_.fps));
  }

  RenderedFrame render(int64_t frame) const {
    const double t = static_cast<double>(frame) / cfg_.fps;
    RenderedFrame out;
    out.rgb = render_background(t);
    for (size_t i = 0; i < cfg_.actors.size(); ++i) {
      const auto& a = cfg_.actors[i];
      if (t < a.entry_time) continue;
      std::vector<Pt> pose = actor_pose(static_cast<int>(i), t);
      PersonMask mask = draw_person(out.rgb, pose, a.body_scale);
      out.masks.push_back(std::move(mask));
      out.coco17.push_back(to_coco(pose, static_cast<int>(i)));
      out.body25.push_back(to_body25(pose, static_cast<int>(i)));
    }
    return out;
  }

  /// Head-joint (nose) position for an actor at time t; used by tests to
  /// verify fall kinematics without rendering.
  Pt head_position(int actor, double t) const {
    return actor_pose(actor, t)[kNose];
  }

 private:
  // -- background ----------------------------------------------------------

  ImageU8 render_background(double t) const {
    const int W = cfg_.width, H = cfg_.height;
    ImageU8 img(W, H, 3);
    const int floor_y = H * 188 / 240;
    for (int y = 0; y < H; ++y) {
      uint8_t v;
      if (y < floor_y) {
        v = static_cast<uint8_t>(118 - 22 * y / std::max(1, floor_y));
      } else {
        v = static_cast<uint8_t>(72 - 10 * (y - floor_y) /
                                          std::max(1, H - floor_y));
      }
      for (int x = 0; x < W; ++x) {
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = v;
      }
    }
    // Door, frame and skirting: vertical structure for the models to learn.
    const int dx0 = W * 48 / 352, dx1 = W * 92 / 352;
    const int dy0 = H * 60 / 240;
    fill_rect(img, dx0 - 3, dy0 - 3, dx1 + 3, floor_y, 52);
    fill_rect(img, dx0, dy0, dx1, floor_y, 44);
    fill_rect(img, 0, floor_y - 4, W, floor_y, 34);
    // Wall art.
    fill_rect(img, W * 150 / 352, H * 70 / 240, W * 190 / 352, H * 110 / 240,
              140);
    // Cart (the strikeable object); displaced during an object_strike event.
    int cx = cart_x_;
    for (const auto& e : cfg_.events) {
      if (e.kind == EventKind::object_strike && t >= e.start && t < e.end) {
        cx += cfg_.width * 60 / 352;
      }
    }
    const int cy0 = floor_y - H * 38 / 240;
    fill_rect(img, cx, cy0, cx + cart_w_, floor_y, 38);
    draw_disc(img, cx + 6, floor_y - 2, 4, 26);
    draw_disc(img, cx + cart_w_ - 6, floor_y - 2, 4, 26);
    return img;
  }

  // -- kinematics -----------------------------------------------------------

  /// Arc-length position along the actor's polyline, ping-ponging.
  Pt path_position(const ActorSpec& a, double dist, double* facing) const {
    std::vector<double> seg_len;
    double total = 0.0;
    for (size_t i = 0; i + 1 < a.waypoints.size(); ++i) {
      const double dx = a.waypoints[i + 1].first - a.waypoints[i].first;
      const double dy = a.waypoints[i + 1].second - a.waypoints[i].second;
      const double len = std::hypot(dx, dy);
      seg_len.push_back(len);
      total += len;
    }
    if (total <= 1e-9) {
      *facing = 1.0;
      return {a.waypoints[0].first, a.waypoints[0].second};
    }
    const double period = 2.0 * total;
    double s = std::fmod(dist, period);
    if (s < 0) s += period;
    double dir = 1.0;
    if (s > total) {
      s = period - s;
      dir = -1.0;
    }
    for (size_t i = 0; i < seg_len.size(); ++i) {
      if (s <= seg_len[i] || i + 1 == seg_len.size()) {
        const double u = seg_len[i] > 1e-9 ? s / seg_len[i] : 0.0;
        const auto& p0 = a.waypoints[i];
        const auto& p1 = a.waypoints[i + 1];
        *facing = (p1.first - p0.first) * dir >= 0 ? 1.0 : -1.0;
        return {p0.first + u * (p1.first - p0.first),
                p0.second + u * (p1.second - p0.second)};
      }
      s -= seg_len[i];
    }
    *facing = 1.0;
    return {a.waypoints.back().first, a.waypoints.back().second};
  }

  std::vector<Pt> walk_pose(int idx, double t, double gait_t) const {
    const ActorSpec& a = cfg_.actors[static_cast<size_t>(idx)];
    const double S = a.body_scale;
    double facing = 1.0;
    const double dist =
        a.speed * speed_jitter_[static_cast<size_t>(idx)] *
        std::max(0.0, t - a.entry_time);
    const Pt root = path_position(a, dist, &facing);
    const double phi = 6.283185307179586 * a.gait_frequency * gait_t +
                       phase_[static_cast<size_t>(idx)];
    const double A = a.gait_amplitude;
    const double bob = 0.012 * S * std::sin(2.0 * phi);
    const double xc = root.x, yf = root.y;
    const double d = facing;

    std::vector<Pt> j(17);
    const double hip_y = yf - 0.50 * S + bob;
    const double sho_y = yf - 0.80 * S + bob;
    j[kLHip] = {xc - 0.06 * S, hip_y};
    j[kRHip] = {xc + 0.06 * S, hip_y};
    j[kLSho] = {xc - 0.09 * S, sho_y};
    j[kRSho] = {xc + 0.09 * S, sho_y};
    j[kNose] = {xc + 0.04 * S * d, yf - 0.92 * S + bob};
    j[kLEye] = {j[kNose].x - 0.025 * S, j[kNose].y - 0.02 * S};
    j[kREye] = {j[kNose].x + 0.025 * S, j[kNose].y - 0.02 * S};
    j[kLEar] = {j[kNose].x - 0.05 * S * d, j[kNose].y - 0.005 * S};
    j[kREar] = {j[kNose].x + 0.05 * S * d, j[kNose].y - 0.005 * S};

    // Legs swing in anti-phase; knees bend forward.
    const double swing = 0.22 * S * A;
    const double lsw = std::sin(phi), rsw = std::sin(phi + 3.141592653589793);
    j[kLAnk] = {j[kLHip].x + d * swing * lsw, yf - 0.04 * S};
    j[kRAnk] = {j[kRHip].x + d * swing * rsw, yf - 0.04 * S};
    const double lift = 0.05 * S;
    j[kLKnee] = {0.5 * (j[kLHip].x + j[kLAnk].x) + d * 0.05 * S,
                 0.5 * (hip_y + j[kLAnk].y) - lift * std::max(0.0, lsw) * A};
    j[kRKnee] = {0.5 * (j[kRHip].x + j[kRAnk].x) + d * 0.05 * S,
                 0.5 * (hip_y + j[kRAnk].y) - lift * std::max(0.0, rsw) * A};

    // Arms counter-swing.
    const double arm = 0.16 * S * A;
    j[kLWri] = {j[kLSho].x - d * arm * lsw, yf - 0.42 * S + bob};
    j[kRWri] = {j[kRSho].x - d * arm * rsw, yf - 0.42 * S + bob};
    j[kLElb] = {0.5 * (j[kLSho].x + j[kLWri].x) - d * 0.02 * S,
                0.5 * (sho_y + j[kLWri].y)};
    j[kRElb] = {0.5 * (j[kRSho].x + j[kRWri].x) - d * 0.02 * S,
                0.5 * (sho_y + j[kRWri].y)};
    return j;
  }

  std::vector<Pt> prone_pose(int idx, double t) const {
    const ActorSpec& a = cfg_.actors[static_cast<size_t>(idx)];
    const double S = a.body_scale;
    double facing = 1.0;
    const double dist =
        a.speed * speed_jitter_[static_cast<size_t>(idx)] *
        std::max(0.0, t - a.entry_time);
    const Pt root = path_position(a, dist, &facing);
    const double d = facing;
    const double xc = root.x, yf = root.y;

    std::vector<Pt> j(17);
    j[kNose] = {xc + d * 0.44 * S, yf - 0.07 * S};
    j[kLEye] = {j[kNose].x - d * 0.02 * S, j[kNose].y - 0.02 * S};
    j[kREye] = {j[kNose].x - d * 0.02 * S, j[kNose].y - 0.03 * S};
    j[kLEar] = {j[kNose].x - d * 0.05 * S, j[kNose].y - 0.01 * S};
    j[kREar] = {j[kNose].x - d * 0.05 * S, j[kNose].y - 0.02 * S};
    j[kLSho] = {xc + d * 0.30 * S, yf - 0.09 * S};
    j[kRSho] = {xc + d * 0.28 * S, yf - 0.05 * S};
    j[kLHip] = {xc - d * 0.05 * S, yf - 0.08 * S};
    j[kRHip] = {xc - d * 0.07 * S, yf - 0.05 * S};
    j[kLKnee] = {xc - d * 0.25 * S, yf - 0.07 * S};
    j[kRKnee] = {xc - d * 0.27 * S, yf - 0.04 * S};
    j[kLAnk] = {xc - d * 0.43 * S, yf - 0.06 * S};
    j[kRAnk] = {xc - d * 0.45 * S, yf - 0.03 * S};
    j[kLElb] = {xc + d * 0.40 * S, yf - 0.10 * S};
    j[kRElb] = {xc + d * 0.38 * S, yf - 0.04 * S};
    j[kLWri] = {xc + d * 0.52 * S, yf - 0.08 * S};
    j[kRWri] = {xc + d * 0.50 * S, yf - 0.03 * S};
    return j;
  }

  std::vector<Pt> actor_pose(int idx, double t) const {
    const AnomalyEvent* active = nullptr;
    for (const auto& e : cfg_.events) {
      if (e.kind == EventKind::object_strike) continue;
      if (e.actor == idx && t >= e.start && t < e.end) {
        active = &e;
        break;
      }
    }
    if (active == nullptr) return walk_pose(idx, t, t);

    if (active->kind == EventKind::fall) {
      // Collapse over 0.5 s, then stay prone; gait frozen at event onset.
      const double u = detail::smoothstep((t - active->start) / 0.5);
      std::vector<Pt> stand = walk_pose(idx, t, active->start);
      std::vector<Pt> prone = prone_pose(idx, t);
      std::vector<Pt> j(17);
      for (int i = 0; i < 17; ++i) {
        j[static_cast<size_t>(i)] = {
            stand[i].x + u * (prone[i].x - stand[i].x),
            stand[i].y + u * (prone[i].y - stand[i].y)};
      }
      return j;
    }

    // Flail: keep walking but swing both arms overhead at high frequency.
    std::vector<Pt> j = walk_pose(idx, t, t);
    const double S = cfg_.actors[static_cast<size_t>(idx)].body_scale;
    const double w = 6.283185307179586 * 4.5 * (t - active->start);
    const double amp = 0.38 * S;
    j[kLWri] = {j[kLSho].x - amp * std::cos(w),
                j[kLSho].y - amp * (0.55 + 0.45 * std::sin(w))};
    j[kRWri] = {j[kRSho].x + amp * std::cos(w * 0.93 + 1.3),
                j[kRSho].y - amp * (0.55 + 0.45 * std::sin(w * 0.93 + 1.3))};
    j[kLElb] = {0.5 * (j[kLSho].x + j[kLWri].x) - 0.06 * S,
                0.5 * (j[kLSho].y + j[kLWri].y)};
    j[kRElb] = {0.5 * (j[kRSho].x + j[kRWri].x) + 0.06 * S,
                0.5 * (j[kRSho].y + j[kRWri].y)};
    return j;
  }

  // -- rendering ------------------------------------------------------------

  /// Draws the articulated figure with the sentinel intensity and returns
  /// the exact set of painted pixels as the person's mask.
  PersonMask draw_person(ImageU8& frame, const std::vector<Pt>& j,
                         double S) const {
    ImageU8 scratch(frame.width, frame.height, 1, 0);
    const int limb = std::max(2, static_cast<int>(std::lround(0.085 * S)));
    const int arm = std::max(2, static_cast<int>(std::lround(0.06 * S)));
    auto seg = [&](int a, int b, int th) {
      draw_line_thick(scratch, static_cast<int>(std::lround(j[a].x)),
                      static_cast<int>(std::lround(j[a].y)),
                      static_cast<int>(std::lround(j[b].x)),
                      static_cast<int>(std::lround(j[b].y)), th, 255);
    };
    // Torso quad, slightly widened.
    const double wx = 0.05 * S;
    fill_convex_poly(
        scratch,
        {static_cast<float>(j[kLSho].x - wx), static_cast<float>(j[kRSho].x + wx),
         static_cast<float>(j[kRHip].x + wx), static_cast<float>(j[kLHip].x - wx)},
        {static_cast<float>(j[kLSho].y), static_cast<float>(j[kRSho].y),
         static_cast<float>(j[kRHip].y), static_cast<float>(j[kLHip].y)},
        255);
    seg(kLHip, kLKnee, limb);
    seg(kLKnee, kLAnk, limb);
    seg(kRHip, kRKnee, limb);
    seg(kRKnee, kRAnk, limb);
    seg(kLSho, kLElb, arm);
    seg(kLElb, kLWri, arm);
    seg(kRSho, kRElb, arm);
    seg(kRElb, kRWri, arm);
    // Neck and head.
    const Pt mid_sho{0.5 * (j[kLSho].x + j[kRSho].x),
                     0.5 * (j[kLSho].y + j[kRSho].y)};
    draw_line_thick(scratch, static_cast<int>(std::lround(mid_sho.x)),
                    static_cast<int>(std::lround(mid_sho.y)),
                    static_cast<int>(std::lround(j[kNose].x)),
                    static_cast<int>(std::lround(j[kNose].y)), arm, 255);
    draw_disc(scratch, static_cast<int>(std::lround(j[kNose].x)),
              static_cast<int>(std::lround(j[kNose].y)),
              std::max(2, static_cast<int>(std::lround(0.10 * S))), 255);
    // Feet cover the toe/heel joints derived for the BODY-25 layout.
    auto foot = [&](int ank, double dir) {
      draw_line_thick(scratch, static_cast<int>(std::lround(j[ank].x)),
                      static_cast<int>(std::lround(j[ank].y)),
                      static_cast<int>(std::lround(j[ank].x + dir * 0.13 * S)),
                      static_cast<int>(std::lround(j[ank].y + 0.02 * S)), arm,
                      255);
    };
    const double d = j[kNose].x >= 0.5 * (j[kLHip].x + j[kRHip].x) ? 1.0 : -1.0;
    foot(kLAnk, d);
    foot(kRAnk, d);

    PersonMask mask(frame.width, frame.height);
    for (int y = 0; y < frame.height; ++y) {
      for (int x = 0; x < frame.width; ++x) {
        if (scratch.at(x, y)) {
          mask.at(x, y) = 1;
          for (int c = 0; c < 3; ++c) frame.at(x, y, c) = kPersonSentinel;
        }
      }
    }
    return mask;
  }

  // -- keypoint export ------------------------------------------------------

  float joint_conf(int actor, int joint) const {
    return static_cast<float>(
        0.86 + 0.1 * detail::h01(cfg_.seed, 1000 + actor, joint));
  }

  PersonKeypoints to_coco(const std::vector<Pt>& j, int actor) const {
    PersonKeypoints p;
    p.layout = KeypointLayout::coco17;
    for (int i = 0; i < 17; ++i) {
      p.joints.push_back({static_cast<float>(j[i].x),
                          static_cast<float>(j[i].y), joint_conf(actor, i)});
    }
    return p;
  }

  PersonKeypoints to_body25(const std::vector<Pt>& j, int actor) const {
    const double d =
        j[kNose].x >= 0.5 * (j[kLHip].x + j[kRHip].x) ? 1.0 : -1.0;
    const double S = cfg_.actors[static_cast<size_t>(actor)].body_scale;
    auto mid = [](const Pt& a, const Pt& b) {
      return Pt{0.5 * (a.x + b.x), 0.5 * (a.y + b.y)};
    };
    const Pt neck = mid(j[kLSho], j[kRSho]);
    const Pt midhip = mid(j[kLHip], j[kRHip]);
    // BODY-25 order: nose, neck, R arm, L arm, midhip, R leg, L leg, face,
    // L foot, R foot.
    std::vector<Pt> b(25);
    b[0] = j[kNose];
    b[1] = neck;
    b[2] = j[kRSho];
    b[3] = j[kRElb];
    b[4] = j[kRWri];
    b[5] = j[kLSho];
    b[6] = j[kLElb];
    b[7] = j[kLWri];
    b[8] = midhip;
    b[9] = j[kRHip];
    b[10] = j[kRKnee];
    b[11] = j[kRAnk];
    b[12] = j[kLHip];
    b[13] = j[kLKnee];
    b[14] = j[kLAnk];
    b[15] = j[kREye];
    b[16] = j[kLEye];
    b[17] = j[kREar];
    b[18] = j[kLEar];
    b[19] = {j[kLAnk].x + d * 0.11 * S, j[kLAnk].y + 0.02 * S};  // LBigToe
    b[20] = {j[kLAnk].x + d * 0.13 * S, j[kLAnk].y + 0.02 * S};  // LSmallToe
    b[21] = {j[kLAnk].x - d * 0.04 * S, j[kLAnk].y + 0.015 * S};  // LHeel
    b[22] = {j[kRAnk].x + d * 0.11 * S, j[kRAnk].y + 0.02 * S};  // RBigToe
    b[23] = {j[kRAnk].x + d * 0.13 * S, j[kRAnk].y + 0.02 * S};  // RSmallToe
    b[24] = {j[kRAnk].x - d * 0.04 * S, j[kRAnk].y + 0.015 * S};  // RHeel
    PersonKeypoints p;
    p.layout = KeypointLayout::body25;
    for (int i = 0; i < 25; ++i) {
      p.joints.push_back({static_cast<float>(b[i].x),
                          static_cast<float>(b[i].y),
                          joint_conf(actor, 100 + i)});
    }
    return p;
  }

  SceneConfig cfg_;
  std::vector<double> phase_;
  std::vector<double> speed_jitter_;
  int cart_x_ = 0;
  int cart_w_ = 0;
};

}  // namespace veil::synth
