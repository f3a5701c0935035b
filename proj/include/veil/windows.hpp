#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "veil/binio.hpp"
#include "veil/common.hpp"
#include "veil/image.hpp"
#include "veil/tensor.hpp"
#include "veil/variants.hpp"

namespace veil {

/// Timing metadata for one window, mirrored in the sidecar index.
struct WindowMeta {
  int64_t index = 0;
  double start_time = 0.0;
  double end_time = 0.0;
};

// ---------------------------------------------------------------------------
// Window store (.veilwin)
//
//   magic   "VEILWIN1"
//   u32     version (1)
//   u32     variant
//   u32     c, t, h, w
//   u64     count
//   u64     config_hash, seed
//   data    count x (c*t*h*w) float32
//
// A sidecar CSV "<path>.idx" lists window_index,start_time,end_time.
// ---------------------------------------------------------------------------

inline constexpr char kWindowMagic[8] = {'V', 'E', 'I', 'L', 'W', 'I', 'N', '1'};

struct WindowStoreHeader {
  VariantKind variant = VariantKind::rgb;
  Shape4 shape{1, 75, 64, 64};
  int64_t count = 0;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

class WindowStoreWriter {
 public:
  WindowStoreWriter(const std::string& path, VariantKind variant,
                    Shape4 shape, uint64_t config_hash, uint64_t seed)
      : out_(path, std::ios::binary),
        idx_(path + ".idx"),
        path_(path),
        shape_(shape) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
    if (!idx_) throw IoError("cannot open " + path + ".idx for writing");
    write_bytes(out_, kWindowMagic, 8);
    write_pod<uint32_t>(out_, 1);
    write_pod<uint32_t>(out_, static_cast<uint32_t>(variant));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(shape.c));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(shape.t));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(shape.h));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(shape.w));
    count_pos_ = out_.tellp();
    write_pod<uint64_t>(out_, 0);
    write_pod<uint64_t>(out_, config_hash);
    write_pod<uint64_t>(out_, seed);
    idx_ << "window_index,start_time,end_time\n";
  }

  void add(const Tensor4<float>& window, const WindowMeta& meta) {
    require_shape(window, shape_, "WindowStoreWriter");
    write_bytes(out_, window.data.data(), window.data.size() * sizeof(float));
    idx_ << meta.index << "," << detail::format_msg("%.3f", meta.start_time)
         << "," << detail::format_msg("%.3f", meta.end_time) << "\n";
    ++count_;
  }

  void finalize() {
    out_.seekp(count_pos_);
    write_pod<uint64_t>(out_, count_);
    out_.flush();
    idx_.flush();
    if (!out_ || !idx_) throw IoError("window store flush failed: " + path_);
  }

  int64_t count() const { return static_cast<int64_t>(count_); }

 private:
  std::ofstream out_;
  std::ofstream idx_;
  std::string path_;
  Shape4 shape_;
  std::streampos count_pos_{};
  uint64_t count_ = 0;
};

class WindowStoreReader {
 public:
  explicit WindowStoreReader(const std::string& path)
      : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw IoError("cannot open window store " + path);
    char magic[8];
    read_bytes(in_, magic, 8, "window store magic");
    if (std::memcmp(magic, kWindowMagic, 8) != 0) {
      throw IoError(path + ": not a veil window store");
    }
    const uint32_t version = read_pod<uint32_t>(in_, "version");
    if (version != 1) {
      throw IoError(path + ": unsupported window store version " +
                    std::to_string(version));
    }
    hdr_.variant =
        static_cast<VariantKind>(read_pod<uint32_t>(in_, "variant"));
    hdr_.shape.c = static_cast<int>(read_pod<uint32_t>(in_, "c"));
    hdr_.shape.t = static_cast<int>(read_pod<uint32_t>(in_, "t"));
    hdr_.shape.h = static_cast<int>(read_pod<uint32_t>(in_, "h"));
    hdr_.shape.w = static_cast<int>(read_pod<uint32_t>(in_, "w"));
    hdr_.count = static_cast<int64_t>(read_pod<uint64_t>(in_, "count"));
    hdr_.config_hash = read_pod<uint64_t>(in_, "config hash");
    hdr_.seed = read_pod<uint64_t>(in_, "seed");
    if (hdr_.shape.numel() <= 0 || hdr_.count < 0) {
      throw IoError(path + ": corrupt window store header");
    }
    data_pos_ = in_.tellg();
    // Verify the payload is complete up front.
    in_.seekg(0, std::ios::end);
    const int64_t have = static_cast<int64_t>(in_.tellg()) -
                         static_cast<int64_t>(data_pos_);
    const int64_t want =
        hdr_.count * hdr_.shape.numel() * static_cast<int64_t>(sizeof(float));
    if (have < want) throw IoError(path + ": truncated window payload");
    metas_ = read_index(path + ".idx", hdr_.count);
  }

  const WindowStoreHeader& header() const { return hdr_; }
  const std::vector<WindowMeta>& metas() const { return metas_; }

  Tensor4<float> read(int64_t i) {
    if (i < 0 || i >= hdr_.count) {
      throw IoError(path_ + ": window index out of range");
    }
    Tensor4<float> t(hdr_.shape);
    in_.clear();
    in_.seekg(data_pos_ + static_cast<std::streamoff>(
                              i * hdr_.shape.numel() *
                              static_cast<int64_t>(sizeof(float))));
    read_bytes(in_, t.data.data(), t.data.size() * sizeof(float), "window");
    return t;
  }

  std::vector<Tensor4<float>> read_all() {
    std::vector<Tensor4<float>> out;
    out.reserve(static_cast<size_t>(hdr_.count));
    for (int64_t i = 0; i < hdr_.count; ++i) out.push_back(read(i));
    return out;
  }

 private:
  static std::vector<WindowMeta> read_index(const std::string& path,
                                            int64_t count) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open window index " + path);
    std::string line;
    if (!std::getline(in, line) || line != "window_index,start_time,end_time") {
      throw IoError(path + ": bad window index header");
    }
    std::vector<WindowMeta> metas;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      WindowMeta m;
      long long idx = 0;
      if (std::sscanf(line.c_str(), "%lld,%lf,%lf", &idx, &m.start_time,
                      &m.end_time) != 3) {
        throw IoError(path + ": bad index row '" + line + "'");
      }
      m.index = idx;
      metas.push_back(m);
    }
    if (static_cast<int64_t>(metas.size()) != count) {
      throw IoError(path + ": index row count does not match store");
    }
    return metas;
  }

  std::ifstream in_;
  std::string path_;
  WindowStoreHeader hdr_;
  std::streampos data_pos_{};
  std::vector<WindowMeta> metas_;
};

/// Groups consecutive 64x64 frames into non-overlapping windows of
/// `window_len` frames; a trailing remainder shorter than one window is
/// dropped. Frame k of the input is at time (k / fps) + t0.
class WindowAssembler {
 public:
  WindowAssembler(Shape4 shape, double fps, double t0 = 0.0)
      : shape_(shape), fps_(fps), t0_(t0), current_(shape) {}

  /// Adds one frame (values already in [0,1]); returns a completed window
  /// when this frame fills it, else nullptr.
  template <typename Sink>
  void add(const ImageF& frame, Sink&& sink) {
    if (frame.width != shape_.w || frame.height != shape_.h) {
      throw ShapeError("WindowAssembler: frame size mismatch");
    }
    float* dst = current_.row(0, fill_, 0);
    std::copy(frame.px.begin(), frame.px.end(), dst);
    ++fill_;
    ++total_frames_;
    if (fill_ == shape_.t) {
      WindowMeta meta;
      meta.index = emitted_;
      meta.start_time = t0_ + (total_frames_ - shape_.t) / fps_;
      meta.end_time = t0_ + total_frames_ / fps_;
      sink(current_, meta);
      ++emitted_;
      fill_ = 0;
    }
  }

  int64_t emitted() const { return emitted_; }
  int64_t dropped_frames() const { return fill_; }

 private:
  Shape4 shape_;
  double fps_;
  double t0_;
  Tensor4<float> current_;
  int fill_ = 0;
  int64_t total_frames_ = 0;
  int64_t emitted_ = 0;
};

}  // namespace veil
