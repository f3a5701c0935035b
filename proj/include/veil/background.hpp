#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "veil/annotations.hpp"
#include "veil/common.hpp"
#include "veil/image.hpp"

namespace veil {

/// Per-pixel temporal median over grayscale frames. Pixels covered by any
/// person mask in a frame are excluded from that pixel's sample set; if a
/// pixel is masked everywhere the median falls back to all samples. Uses the
/// lower median (element (n-1)/2 of the sorted samples) so the output value
/// is always one of the observed values.
inline ImageU8 estimate_background(
    const std::vector<ImageU8>& frames,
    const std::vector<std::vector<PersonMask>>* masks_per_frame = nullptr) {
  if (frames.empty()) {
    throw Error("estimate_background: empty frame sequence");
  }
  const int w = frames[0].width, h = frames[0].height;
  for (const auto& f : frames) {
    if (f.channels != 1) {
      throw Error("estimate_background: frames must be grayscale");
    }
    if (f.width != w || f.height != h) {
      throw Error("estimate_background: inconsistent frame dimensions");
    }
  }
  if (masks_per_frame && masks_per_frame->size() != frames.size()) {
    throw Error("estimate_background: masks/frames count mismatch");
  }
  if (masks_per_frame) {
    for (const auto& masks : *masks_per_frame) {
      for (const auto& m : masks) {
        if (m.width != w || m.height != h) {
          throw Error("estimate_background: mask dimensions mismatch frame");
        }
      }
    }
  }

  ImageU8 bg(w, h, 1);
  const size_t nf = frames.size();
  parallel_for(h, [&](int64_t yb, int64_t ye) {
    std::vector<uint8_t> kept, all;
    kept.reserve(nf);
    all.reserve(nf);
    for (int64_t y = yb; y < ye; ++y) {
      for (int x = 0; x < w; ++x) {
        kept.clear();
        all.clear();
        for (size_t i = 0; i < nf; ++i) {
          const uint8_t v = frames[i].at(x, static_cast<int>(y));
          all.push_back(v);
          bool masked = false;
          if (masks_per_frame) {
            for (const auto& m : (*masks_per_frame)[i]) {
              if (m.at(x, static_cast<int>(y))) {
                masked = true;
                break;
              }
            }
          }
          if (!masked) kept.push_back(v);
        }
        std::vector<uint8_t>& s = kept.empty() ? all : kept;
        const size_t mid = (s.size() - 1) / 2;
        std::nth_element(s.begin(), s.begin() + mid, s.end());
        bg.at(x, static_cast<int>(y)) = s[mid];
      }
    }
  });
  return bg;
}

}  // namespace veil
