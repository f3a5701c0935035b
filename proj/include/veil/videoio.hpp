#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <zlib.h>

#include "veil/binio.hpp"
#include "veil/common.hpp"
#include "veil/image.hpp"

namespace veil {

// ---------------------------------------------------------------------------
// Frame stream container (.rawv)
//
//   magic   "VEILVID1"
//   u32     width, height, channels, fps
//   u8      compression (0 = none, 1 = zlib per frame)
//   u64     frame_count
//   frames  frame_count x { u32 payload_size, payload bytes }
//
// Payloads are interleaved 8-bit pixel rows. Frames are seekable through the
// per-frame size prefix.
// ---------------------------------------------------------------------------

inline constexpr char kVideoMagic[8] = {'V', 'E', 'I', 'L', 'V', 'I', 'D', '1'};

namespace detail {

inline std::vector<uint8_t> zlib_deflate(const std::vector<uint8_t>& in,
                                         int level) {
  uLongf cap = compressBound(static_cast<uLong>(in.size()));
  std::vector<uint8_t> out(cap);
  if (compress2(out.data(), &cap, in.data(), static_cast<uLong>(in.size()),
                level) != Z_OK) {
    throw IoError("zlib compression failed");
  }
  out.resize(cap);
  return out;
}

inline void zlib_inflate(const std::vector<uint8_t>& in,
                         std::vector<uint8_t>& out) {
  uLongf n = static_cast<uLong>(out.size());
  if (uncompress(out.data(), &n, in.data(), static_cast<uLong>(in.size())) !=
          Z_OK ||
      n != out.size()) {
    throw IoError("zlib decompression failed");
  }
}

}  // namespace detail

class VideoWriter {
 public:
  VideoWriter(const std::string& path, int width, int height, int channels,
              int fps, bool compress = true, int level = 4)
      : out_(path, std::ios::binary),
        path_(path),
        width_(width),
        height_(height),
        channels_(channels),
        compress_(compress),
        level_(level) {
    if (!out_) throw IoError("cannot open " + path + " for writing");
    write_bytes(out_, kVideoMagic, 8);
    write_pod<uint32_t>(out_, static_cast<uint32_t>(width));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(height));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(channels));
    write_pod<uint32_t>(out_, static_cast<uint32_t>(fps));
    write_pod<uint8_t>(out_, compress ? 1 : 0);
    count_pos_ = out_.tellp();
    write_pod<uint64_t>(out_, 0);
  }

  void add(const ImageU8& frame) {
    if (frame.width != width_ || frame.height != height_ ||
        frame.channels != channels_) {
      throw IoError("VideoWriter: frame geometry mismatch");
    }
    if (compress_) {
      add_payload(detail::zlib_deflate(frame.px, level_));
    } else {
      add_payload(frame.px);
    }
  }

  /// Appends an already-encoded payload (used by parallel producers; the
  /// payload must match this writer's compression setting).
  void add_payload(const std::vector<uint8_t>& payload) {
    write_pod<uint32_t>(out_, static_cast<uint32_t>(payload.size()));
    write_bytes(out_, payload.data(), payload.size());
    ++count_;
  }

  bool compressed() const { return compress_; }
  int level() const { return level_; }

  void finalize() {
    out_.seekp(count_pos_);
    write_pod<uint64_t>(out_, count_);
    out_.flush();
    if (!out_) throw IoError("VideoWriter: flush failed for " + path_);
  }

  int64_t count() const { return static_cast<int64_t>(count_); }

 private:
  std::ofstream out_;
  std::string path_;
  int width_, height_, channels_;
  bool compress_;
  int level_;
  std::streampos count_pos_{};
  uint64_t count_ = 0;
};

/// Uniform access to a sequence of frames, either a .rawv stream or a
/// directory of numbered PGM/PPM images.
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual int64_t count() const = 0;
  virtual int width() const = 0;
  virtual int height() const = 0;
  virtual int fps() const = 0;
  virtual ImageU8 read(int64_t index) = 0;
};

class VideoReader : public FrameSource {
 public:
  explicit VideoReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open video " + path);
    char magic[8];
    read_bytes(in_, magic, 8, "video magic");
    if (std::memcmp(magic, kVideoMagic, 8) != 0) {
      throw IoError(path + ": not a veil video stream");
    }
    width_ = static_cast<int>(read_pod<uint32_t>(in_, "width"));
    height_ = static_cast<int>(read_pod<uint32_t>(in_, "height"));
    channels_ = static_cast<int>(read_pod<uint32_t>(in_, "channels"));
    fps_ = static_cast<int>(read_pod<uint32_t>(in_, "fps"));
    compressed_ = read_pod<uint8_t>(in_, "compression") != 0;
    count_ = static_cast<int64_t>(read_pod<uint64_t>(in_, "frame count"));
    if (width_ < 1 || height_ < 1 || (channels_ != 1 && channels_ != 3) ||
        fps_ < 1 || count_ < 0) {
      throw IoError(path + ": corrupt video header");
    }
    offsets_.reserve(static_cast<size_t>(count_));
    for (int64_t i = 0; i < count_; ++i) {
      const uint32_t sz = read_pod<uint32_t>(in_, "frame size");
      offsets_.push_back({in_.tellg(), sz});
      in_.seekg(static_cast<std::streamoff>(sz), std::ios::cur);
      if (!in_) throw IoError(path + ": truncated frame table");
    }
  }

  int64_t count() const override { return count_; }
  int width() const override { return width_; }
  int height() const override { return height_; }
  int channels() const { return channels_; }
  int fps() const override { return fps_; }

  ImageU8 read(int64_t index) override {
    if (index < 0 || index >= count_) {
      throw IoError("VideoReader: frame index out of range");
    }
    const auto& [pos, sz] = offsets_[static_cast<size_t>(index)];
    in_.clear();
    in_.seekg(pos);
    ImageU8 img(width_, height_, channels_);
    if (compressed_) {
      std::vector<uint8_t> z(sz);
      read_bytes(in_, z.data(), sz, "frame payload");
      detail::zlib_inflate(z, img.px);
    } else {
      if (sz != img.px.size()) throw IoError("VideoReader: bad frame size");
      read_bytes(in_, img.px.data(), sz, "frame payload");
    }
    return img;
  }

 private:
  std::ifstream in_;
  int width_ = 0, height_ = 0, channels_ = 0, fps_ = 0;
  bool compressed_ = false;
  int64_t count_ = 0;
  std::vector<std::pair<std::streampos, uint32_t>> offsets_;
};

// ---------------------------------------------------------------------------
// PGM (P5) / PPM (P6) single images and numbered-directory sources.
// ---------------------------------------------------------------------------

inline void write_pnm(const std::string& path, const ImageU8& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  write_bytes(out, img.px.data(), img.px.size());
}

inline ImageU8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P6") {
    throw IoError(path + ": unsupported image format (expect P5/P6)");
  }
  auto skip_ws_comments = [&] {
    while (true) {
      const int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
  };
  int w, h, maxv;
  skip_ws_comments();
  in >> w;
  skip_ws_comments();
  in >> h;
  skip_ws_comments();
  in >> maxv;
  in.get();  // single whitespace before raster
  if (!in || w < 1 || h < 1 || maxv != 255) {
    throw IoError(path + ": bad PNM header");
  }
  ImageU8 img(w, h, magic == "P6" ? 3 : 1);
  read_bytes(in, img.px.data(), img.px.size(), "PNM raster");
  return img;
}

/// Directory of numbered frames, e.g. frame_000123.pgm, ordered by the
/// number embedded in the file name.
class FrameDirReader : public FrameSource {
 public:
  explicit FrameDirReader(const std::string& dir, int fps) : fps_(fps) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw IoError(dir + " is not a directory");
    std::vector<std::pair<int64_t, std::string>> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      const std::string ext = e.path().extension().string();
      if (ext != ".pgm" && ext != ".ppm") continue;
      const std::string stem = e.path().stem().string();
      int64_t num = -1;
      for (size_t i = 0; i < stem.size(); ++i) {
        if (std::isdigit(static_cast<unsigned char>(stem[i]))) {
          num = std::strtoll(stem.c_str() + i, nullptr, 10);
          break;
        }
      }
      if (num < 0) continue;
      entries.emplace_back(num, e.path().string());
    }
    if (entries.empty()) throw IoError(dir + ": no numbered .pgm/.ppm frames");
    std::sort(entries.begin(), entries.end());
    for (auto& [num, path] : entries) paths_.push_back(std::move(path));
    const ImageU8 first = read_pnm(paths_[0]);
    width_ = first.width;
    height_ = first.height;
  }

  int64_t count() const override {
    return static_cast<int64_t>(paths_.size());
  }
  int width() const override { return width_; }
  int height() const override { return height_; }
  int fps() const override { return fps_; }

  ImageU8 read(int64_t index) override {
    if (index < 0 || index >= count()) {
      throw IoError("FrameDirReader: index out of range");
    }
    return read_pnm(paths_[static_cast<size_t>(index)]);
  }

 private:
  std::vector<std::string> paths_;
  int width_ = 0, height_ = 0, fps_ = 0;
};

/// Opens either a .rawv file or a frame directory.
inline std::unique_ptr<FrameSource> open_frames(const std::string& path,
                                                int dir_fps = 30) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) {
    return std::make_unique<FrameDirReader>(path, dir_fps);
  }
  return std::make_unique<VideoReader>(path);
}

}  // namespace veil
