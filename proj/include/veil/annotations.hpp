#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "veil/common.hpp"

namespace veil {

enum class KeypointLayout { coco17, body25 };

inline const char* layout_name(KeypointLayout l) {
  return l == KeypointLayout::coco17 ? "coco17" : "body25";
}

inline KeypointLayout parse_layout(const std::string& s) {
  if (s == "coco17") return KeypointLayout::coco17;
  if (s == "body25") return KeypointLayout::body25;
  throw ConfigError("unknown keypoint layout '" + s + "'");
}

inline int layout_joint_count(KeypointLayout l) {
  return l == KeypointLayout::coco17 ? 17 : 25;
}

/// COCO-17 joint order: nose, l/r eye, l/r ear, l/r shoulder, l/r elbow,
/// l/r wrist, l/r hip, l/r knee, l/r ankle.
inline const std::vector<std::pair<int, int>>& coco17_edges() {
  static const std::vector<std::pair<int, int>> e = {
      {15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
      {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},  {1, 2},  {0, 1},
      {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6}};
  return e;
}

/// BODY-25 pairs as used by the Openpose body model.
inline const std::vector<std::pair<int, int>>& body25_edges() {
  static const std::vector<std::pair<int, int>> e = {
      {1, 8},   {1, 2},   {1, 5},   {2, 3},   {3, 4},   {5, 6},
      {6, 7},   {8, 9},   {9, 10},  {10, 11}, {8, 12},  {12, 13},
      {13, 14}, {1, 0},   {0, 15},  {15, 17}, {0, 16},  {16, 18},
      {14, 19}, {19, 20}, {14, 21}, {11, 22}, {22, 23}, {11, 24}};
  return e;
}

inline const std::vector<std::pair<int, int>>& layout_edges(KeypointLayout l) {
  return l == KeypointLayout::coco17 ? coco17_edges() : body25_edges();
}

struct Joint {
  float x = 0.f;
  float y = 0.f;
  float confidence = 0.f;
};

struct PersonKeypoints {
  KeypointLayout layout = KeypointLayout::coco17;
  std::vector<Joint> joints;
};

/// Binary per-person mask at frame resolution; one byte per pixel (0/1).
struct PersonMask {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> bits;

  PersonMask() = default;
  PersonMask(int w, int h)
      : width(w), height(h), bits(static_cast<size_t>(w) * h, 0) {}
  uint8_t& at(int x, int y) { return bits[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const {
    return bits[static_cast<size_t>(y) * width + x];
  }
};

/// Row-major run-length encoding, alternating zero/one runs starting with
/// the zero run (possibly of length 0).
inline std::vector<int64_t> rle_encode(const PersonMask& m) {
  std::vector<int64_t> runs;
  int64_t count = 0;
  uint8_t cur = 0;
  for (const uint8_t b : m.bits) {
    const uint8_t v = b ? 1 : 0;
    if (v == cur) {
      ++count;
    } else {
      runs.push_back(count);
      cur = v;
      count = 1;
    }
  }
  runs.push_back(count);
  return runs;
}

inline PersonMask rle_decode(const std::vector<int64_t>& runs, int w, int h) {
  PersonMask m(w, h);
  const int64_t total = static_cast<int64_t>(w) * h;
  int64_t pos = 0;
  uint8_t cur = 0;
  for (const int64_t r : runs) {
    if (r < 0 || pos + r > total) throw IoError("rle_decode: runs overflow mask");
    std::fill(m.bits.begin() + pos, m.bits.begin() + pos + r, cur);
    pos += r;
    cur = cur ? 0 : 1;
  }
  if (pos != total) throw IoError("rle_decode: runs do not cover mask");
  return m;
}

struct FrameAnnotation {
  int64_t frame_index = 0;
  std::vector<PersonKeypoints> persons;
  std::vector<PersonMask> masks;
  // Filled instead of `masks` when the reader keeps masks encoded; one run
  // list per person (see rle_decode).
  std::vector<std::vector<int64_t>> mask_runs;
};

struct AnnotationHeader {
  std::string source;  // e.g. "openpose", "detectron"
  KeypointLayout layout = KeypointLayout::coco17;
  int frame_width = 0;
  int frame_height = 0;
  bool has_masks = false;
};

// ---------------------------------------------------------------------------
// JSON-lines annotation files. First line is a header record; every further
// line is one frame:
//   {"frame_index":N, "persons":[{"layout":"coco17","joints":[[x,y,c],...]}],
//    "masks":[{"size":[h,w],"counts":[...]}]}
// ---------------------------------------------------------------------------

class AnnotationWriter {
 public:
  AnnotationWriter(const std::string& path, const AnnotationHeader& hdr)
      : out_(path, std::ios::binary), hdr_(hdr) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
    nlohmann::json j;
    j["type"] = "veil.annotations";
    j["version"] = 1;
    j["source"] = hdr.source;
    j["layout"] = layout_name(hdr.layout);
    j["frame_width"] = hdr.frame_width;
    j["frame_height"] = hdr.frame_height;
    j["has_masks"] = hdr.has_masks;
    out_ << j.dump() << "\n";
  }

  /// One frame record as a JSON line (no trailing newline).
  static std::string serialize(const FrameAnnotation& fa) {
    nlohmann::json j;
    j["frame_index"] = fa.frame_index;
    auto persons = nlohmann::json::array();
    for (const auto& p : fa.persons) {
      nlohmann::json pj;
      pj["layout"] = layout_name(p.layout);
      auto joints = nlohmann::json::array();
      for (const auto& jt : p.joints) {
        joints.push_back({round2(jt.x), round2(jt.y), round2(jt.confidence)});
      }
      pj["joints"] = std::move(joints);
      persons.push_back(std::move(pj));
    }
    j["persons"] = std::move(persons);
    auto masks = nlohmann::json::array();
    for (const auto& m : fa.masks) {
      nlohmann::json mj;
      mj["size"] = {m.height, m.width};
      mj["counts"] = rle_encode(m);
      masks.push_back(std::move(mj));
    }
    j["masks"] = std::move(masks);
    return j.dump();
  }

  void write(const FrameAnnotation& fa) { write_line(serialize(fa)); }

  void write_line(const std::string& line) { out_ << line << "\n"; }

  void flush() {
    out_.flush();
    if (!out_) throw IoError("annotation write failed");
  }

 private:
  static double round2(double v) { return std::round(v * 100.0) / 100.0; }
  std::ofstream out_;
  AnnotationHeader hdr_;
};

class AnnotationReader {
 public:
  /// With decode_masks=false the reader leaves masks run-length encoded in
  /// FrameAnnotation::mask_runs, which keeps long streams cheap to hold.
  explicit AnnotationReader(const std::string& path, bool decode_masks = true)
      : in_(path), path_(path), decode_masks_(decode_masks) {
    if (!in_) throw IoError("cannot open annotations " + path);
    std::string line;
    if (!std::getline(in_, line)) {
      throw IoError("empty annotations file " + path);
    }
    nlohmann::json j = parse_line(line);
    if (j.value("type", "") != "veil.annotations") {
      throw IoError(path + ": not a veil annotations file");
    }
    if (j.value("version", 0) != 1) {
      throw IoError(path + ": unsupported annotations version");
    }
    hdr_.source = j.value("source", "");
    hdr_.layout = parse_layout(j.at("layout").get<std::string>());
    hdr_.frame_width = j.at("frame_width").get<int>();
    hdr_.frame_height = j.at("frame_height").get<int>();
    hdr_.has_masks = j.value("has_masks", false);
  }

  const AnnotationHeader& header() const { return hdr_; }

  /// Reads the next frame record; false at end of file. Records must be
  /// ordered by strictly increasing frame_index.
  bool next(FrameAnnotation& fa) {
    std::string line;
    while (std::getline(in_, line)) {
      if (line.empty()) continue;
      nlohmann::json j = parse_line(line);
      fa = FrameAnnotation{};
      fa.frame_index = j.at("frame_index").get<int64_t>();
      if (fa.frame_index <= last_index_) {
        throw IoError(path_ + ": frame_index not strictly increasing");
      }
      last_index_ = fa.frame_index;
      for (const auto& pj : j.at("persons")) {
        PersonKeypoints p;
        p.layout = parse_layout(pj.at("layout").get<std::string>());
        for (const auto& jt : pj.at("joints")) {
          Joint joint;
          joint.x = jt.at(0).get<float>();
          joint.y = jt.at(1).get<float>();
          joint.confidence = jt.at(2).get<float>();
          if (joint.confidence < 0.f || joint.confidence > 1.f) {
            throw IoError(path_ + ": joint confidence outside [0,1]");
          }
          p.joints.push_back(joint);
        }
        if (static_cast<int>(p.joints.size()) != layout_joint_count(p.layout)) {
          throw IoError(path_ + ": joint count does not match layout " +
                        std::string(layout_name(p.layout)));
        }
        fa.persons.push_back(std::move(p));
      }
      for (const auto& mj : j.at("masks")) {
        const int h = mj.at("size").at(0).get<int>();
        const int w = mj.at("size").at(1).get<int>();
        if (w != hdr_.frame_width || h != hdr_.frame_height) {
          throw IoError(path_ + ": mask dimensions do not match frame");
        }
        auto runs = mj.at("counts").get<std::vector<int64_t>>();
        if (decode_masks_) {
          fa.masks.push_back(rle_decode(runs, w, h));
        } else {
          fa.mask_runs.push_back(std::move(runs));
        }
      }
      return true;
    }
    return false;
  }

 private:
  nlohmann::json parse_line(const std::string& line) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path_ + ": bad JSON line: " + e.what());
    }
  }

  std::ifstream in_;
  std::string path_;
  AnnotationHeader hdr_;
  bool decode_masks_ = true;
  int64_t last_index_ = -1;
};

}  // namespace veil
