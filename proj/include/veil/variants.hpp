#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "veil/annotations.hpp"
#include "veil/common.hpp"
#include "veil/image.hpp"

namespace veil {

/// The seven input representations: raw frames, skeleton overlays from two
/// pose sources with/without background, and segmentation masks with/without
/// background.
enum class VariantKind {
  rgb,
  op_skel_nobg,
  op_skel_bg,
  det_skel_nobg,
  det_skel_bg,
  mask_nobg,
  mask_bg,
};

inline const char* variant_name(VariantKind k) {
  switch (k) {
    case VariantKind::rgb: return "rgb";
    case VariantKind::op_skel_nobg: return "op_skel_nobg";
    case VariantKind::op_skel_bg: return "op_skel_bg";
    case VariantKind::det_skel_nobg: return "det_skel_nobg";
    case VariantKind::det_skel_bg: return "det_skel_bg";
    case VariantKind::mask_nobg: return "mask_nobg";
    case VariantKind::mask_bg: return "mask_bg";
  }
  return "?";
}

inline VariantKind parse_variant(const std::string& s) {
  for (const VariantKind k :
       {VariantKind::rgb, VariantKind::op_skel_nobg, VariantKind::op_skel_bg,
        VariantKind::det_skel_nobg, VariantKind::det_skel_bg,
        VariantKind::mask_nobg, VariantKind::mask_bg}) {
    if (s == variant_name(k)) return k;
  }
  throw ConfigError("unknown variant '" + s + "'");
}

inline bool variant_uses_skeleton(VariantKind k) {
  return k == VariantKind::op_skel_nobg || k == VariantKind::op_skel_bg ||
         k == VariantKind::det_skel_nobg || k == VariantKind::det_skel_bg;
}
inline bool variant_uses_mask(VariantKind k) {
  return k == VariantKind::mask_nobg || k == VariantKind::mask_bg;
}
inline bool variant_keeps_background(VariantKind k) {
  return k == VariantKind::op_skel_bg || k == VariantKind::det_skel_bg ||
         k == VariantKind::mask_bg;
}
/// Pose source expected by skeleton variants (openpose -> BODY-25,
/// detectron -> COCO-17).
inline KeypointLayout variant_layout(VariantKind k) {
  return (k == VariantKind::op_skel_nobg || k == VariantKind::op_skel_bg)
             ? KeypointLayout::body25
             : KeypointLayout::coco17;
}
/// Person masks are needed to erase person pixels in all *_bg variants and
/// to draw the mask variants themselves.
inline bool variant_needs_masks(VariantKind k) {
  return variant_uses_mask(k) || variant_keeps_background(k);
}

struct SkeletonStyle {
  float confidence_threshold = 0.1f;
  int line_thickness = 2;
  int joint_radius = 2;
  uint8_t intensity = 255;
};

/// Draws one skeleton per person: a segment for every connectivity edge
/// whose both endpoints clear the confidence threshold, then a disc per
/// kept joint. Off-canvas geometry is clipped.
inline void render_skeleton(ImageU8& canvas,
                            const std::vector<PersonKeypoints>& persons,
                            const SkeletonStyle& style) {
  for (const auto& p : persons) {
    if (static_cast<int>(p.joints.size()) != layout_joint_count(p.layout)) {
      throw Error("render_skeleton: joint count does not match layout");
    }
    const auto& edges = layout_edges(p.layout);
    for (const auto& [a, b] : edges) {
      const Joint& ja = p.joints[static_cast<size_t>(a)];
      const Joint& jb = p.joints[static_cast<size_t>(b)];
      if (ja.confidence < style.confidence_threshold ||
          jb.confidence < style.confidence_threshold) {
        continue;
      }
      draw_line_thick(canvas, static_cast<int>(std::lround(ja.x)),
                      static_cast<int>(std::lround(ja.y)),
                      static_cast<int>(std::lround(jb.x)),
                      static_cast<int>(std::lround(jb.y)),
                      style.line_thickness, style.intensity);
    }
    for (const Joint& j : p.joints) {
      if (j.confidence < style.confidence_threshold) continue;
      draw_disc(canvas, static_cast<int>(std::lround(j.x)),
                static_cast<int>(std::lround(j.y)), style.joint_radius,
                style.intensity);
    }
  }
}

/// Sets the canvas to the fill intensity wherever any person mask is set.
inline void render_mask(ImageU8& canvas, const std::vector<PersonMask>& masks,
                        uint8_t fill) {
  for (const auto& m : masks) {
    if (m.width != canvas.width || m.height != canvas.height) {
      throw Error("render_mask: mask dimensions do not match canvas");
    }
  }
  for (const auto& m : masks) {
    for (int y = 0; y < canvas.height; ++y) {
      for (int x = 0; x < canvas.width; ++x) {
        if (m.at(x, y)) canvas.at(x, y) = fill;
      }
    }
  }
}

/// Composes one privacy frame at native resolution from a grayscale frame
/// plus its annotations.
///
///   rgb      : the frame untouched.
///   *_nobg   : skeleton/mask rendered onto a black canvas.
///   *_bg     : the frame with person-mask pixels replaced by the background
///              model, then the skeleton/mask rendered on top.
///
/// Skeleton variants select the persons whose layout matches the variant's
/// pose source.
inline ImageU8 compose_variant(VariantKind kind, const ImageU8& gray_frame,
                               const std::vector<PersonKeypoints>& persons,
                               const std::vector<PersonMask>& masks,
                               const ImageU8* background,
                               const SkeletonStyle& style) {
  if (gray_frame.channels != 1) {
    throw Error("compose_variant: expected grayscale frame");
  }
  if (kind == VariantKind::rgb) return gray_frame;

  if (variant_keeps_background(kind)) {
    if (background == nullptr) {
      throw Error("compose_variant: variant " +
                  std::string(variant_name(kind)) +
                  " requires a background image");
    }
    if (background->width != gray_frame.width ||
        background->height != gray_frame.height) {
      throw Error("compose_variant: background dimensions mismatch frame");
    }
  }

  ImageU8 canvas;
  if (variant_keeps_background(kind)) {
    canvas = gray_frame;
    // Erase person appearance under the masks before overlaying.
    for (const auto& m : masks) {
      if (m.width != canvas.width || m.height != canvas.height) {
        throw Error("compose_variant: mask dimensions do not match frame");
      }
      for (int y = 0; y < canvas.height; ++y) {
        for (int x = 0; x < canvas.width; ++x) {
          if (m.at(x, y)) canvas.at(x, y) = background->at(x, y);
        }
      }
    }
  } else {
    canvas = ImageU8(gray_frame.width, gray_frame.height, 1, 0);
  }

  if (variant_uses_skeleton(kind)) {
    const KeypointLayout want = variant_layout(kind);
    std::vector<PersonKeypoints> selected;
    for (const auto& p : persons) {
      if (p.layout == want) selected.push_back(p);
    }
    render_skeleton(canvas, selected, style);
  } else if (variant_uses_mask(kind)) {
    render_mask(canvas, masks, style.intensity);
  }
  return canvas;
}

}  // namespace veil
