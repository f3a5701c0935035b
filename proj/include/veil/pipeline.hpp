#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "veil/annotations.hpp"
#include "veil/background.hpp"
#include "veil/common.hpp"
#include "veil/image.hpp"
#include "veil/variants.hpp"
#include "veil/videoio.hpp"
#include "veil/windows.hpp"

namespace veil {

/// Keeps the frames at even source indices, halving a nominal 30 fps stream
/// to 15 fps.
inline std::vector<int64_t> temporal_subsample_indices(int64_t frame_count) {
  std::vector<int64_t> kept;
  kept.reserve(static_cast<size_t>((frame_count + 1) / 2));
  for (int64_t i = 0; i < frame_count; i += 2) kept.push_back(i);
  return kept;
}

struct PreprocessConfig {
  VariantKind variant = VariantKind::mask_bg;
  SkeletonStyle style{};
  int background_samples = 200;  // frames sampled for the median model
  int out_size = 64;
  int window_len = 75;
  int fps_in = 30;  // for frame directories; .rawv streams carry their own
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

struct PreprocessResult {
  int64_t windows = 0;
  int64_t frames_used = 0;
  int64_t frames_dropped = 0;
};

namespace detail {

/// Loads the annotation records into an index->record map with masks kept
/// run-length encoded (raw bitmasks for a long stream would not fit in
/// memory). Frames without a record get empty annotations.
inline std::map<int64_t, FrameAnnotation> load_annotations(
    const std::string& path, VariantKind variant, int* frame_w,
    int* frame_h) {
  std::map<int64_t, FrameAnnotation> by_index;
  AnnotationReader reader(path, /*decode_masks=*/false);
  if (variant_uses_skeleton(variant) &&
      reader.header().layout != variant_layout(variant)) {
    throw ConfigError(path + ": layout " +
                      layout_name(reader.header().layout) +
                      " does not match variant " + variant_name(variant) +
                      " (needs " + layout_name(variant_layout(variant)) + ")");
  }
  if (variant_needs_masks(variant) && !reader.header().has_masks) {
    throw ConfigError(path + ": variant " + std::string(variant_name(variant)) +
                      " needs person masks but the annotation stream has none");
  }
  *frame_w = reader.header().frame_width;
  *frame_h = reader.header().frame_height;
  FrameAnnotation fa;
  while (reader.next(fa)) {
    by_index.emplace(fa.frame_index, std::move(fa));
  }
  return by_index;
}

inline std::vector<PersonMask> decode_masks(const FrameAnnotation& fa, int w,
                                            int h) {
  std::vector<PersonMask> masks;
  masks.reserve(fa.mask_runs.size());
  for (const auto& runs : fa.mask_runs) {
    masks.push_back(rle_decode(runs, w, h));
  }
  return masks;
}

}  // namespace detail

/// Converts raw frames plus pose/mask annotations into normalized windows of
/// one privacy variant and writes them to a window store.
///
/// Steps per the preprocessing recipe: subsample 30->15 fps, grayscale,
/// compose the variant at native resolution, normalize to [0,1] and resize
/// to 64x64, then group into non-overlapping windows (remainder dropped).
inline PreprocessResult preprocess_dataset(FrameSource& frames,
                                           const std::string& annotations_path,
                                           const std::string& out_windows_path,
                                           const PreprocessConfig& cfg) {
  const VariantKind kind = cfg.variant;
  const bool needs_annotations =
      variant_uses_skeleton(kind) || variant_needs_masks(kind);
  if (needs_annotations && annotations_path.empty()) {
    throw ConfigError(std::string("variant ") + variant_name(kind) +
                      " requires an annotation stream");
  }

  std::map<int64_t, FrameAnnotation> annotations;
  int ann_w = 0, ann_h = 0;
  if (needs_annotations) {
    annotations =
        detail::load_annotations(annotations_path, kind, &ann_w, &ann_h);
  }
  static const FrameAnnotation kEmpty{};
  auto annotation_for = [&](int64_t idx) -> const FrameAnnotation& {
    const auto it = annotations.find(idx);
    return it == annotations.end() ? kEmpty : it->second;
  };

  const std::vector<int64_t> kept = temporal_subsample_indices(frames.count());
  const double fps_kept = frames.fps() / 2.0;

  // Background model from an evenly spaced sample of the kept frames,
  // person pixels excluded via the masks.
  ImageU8 background;
  if (variant_keeps_background(kind)) {
    if (kept.empty()) throw Error("preprocess: no frames for background");
    const int64_t want =
        std::min<int64_t>(cfg.background_samples,
                          static_cast<int64_t>(kept.size()));
    std::vector<ImageU8> sample;
    std::vector<std::vector<PersonMask>> sample_masks;
    sample.reserve(static_cast<size_t>(want));
    for (int64_t i = 0; i < want; ++i) {
      const int64_t k =
          kept[static_cast<size_t>(i * static_cast<int64_t>(kept.size()) /
                                   want)];
      sample.push_back(to_grayscale(frames.read(k)));
      sample_masks.push_back(
          detail::decode_masks(annotation_for(k), ann_w, ann_h));
    }
    background = estimate_background(sample, &sample_masks);
  }

  WindowStoreWriter store(out_windows_path, kind,
                          Shape4{1, cfg.window_len, cfg.out_size, cfg.out_size},
                          cfg.config_hash, cfg.seed);
  WindowAssembler assembler(
      Shape4{1, cfg.window_len, cfg.out_size, cfg.out_size}, fps_kept);

  // Transform a block of frames in parallel, then emit in order.
  const int64_t chunk = 150;
  std::vector<ImageF> block;
  for (size_t base = 0; base < kept.size(); base += chunk) {
    const int64_t cnt =
        std::min<int64_t>(chunk, static_cast<int64_t>(kept.size() - base));
    block.assign(static_cast<size_t>(cnt), ImageF{});
    // Frame reads are sequential (the readers keep a single stream);
    // compose+resize runs in the block loop below.
    std::vector<ImageU8> gray(static_cast<size_t>(cnt));
    for (int64_t i = 0; i < cnt; ++i) {
      gray[static_cast<size_t>(i)] =
          to_grayscale(frames.read(kept[base + static_cast<size_t>(i)]));
    }
    parallel_for(cnt, [&](int64_t b, int64_t e) {
      for (int64_t i = b; i < e; ++i) {
        const int64_t src = kept[base + static_cast<size_t>(i)];
        const FrameAnnotation& fa = annotation_for(src);
        const std::vector<PersonMask> masks =
            detail::decode_masks(fa, ann_w, ann_h);
        const ImageU8 composed = compose_variant(
            kind, gray[static_cast<size_t>(i)], fa.persons, masks,
            variant_keeps_background(kind) ? &background : nullptr, cfg.style);
        block[static_cast<size_t>(i)] =
            normalize_resize(composed, cfg.out_size, cfg.out_size);
      }
    });
    for (int64_t i = 0; i < cnt; ++i) {
      assembler.add(block[static_cast<size_t>(i)],
                    [&](const Tensor4<float>& win, const WindowMeta& meta) {
                      store.add(win, meta);
                    });
    }
  }
  store.finalize();

  PreprocessResult res;
  res.windows = store.count();
  res.frames_dropped = assembler.dropped_frames();
  res.frames_used = static_cast<int64_t>(kept.size()) - res.frames_dropped;
  return res;
}

}  // namespace veil
