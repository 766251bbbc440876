#pragma once

#include <optional>
#include <set>
#include <span>
#include <vector>

#include "s4al/raster.hpp"
#include "s4al/rng.hpp"

namespace s4al {

// Maps a source raster onto a destination raster: resize by `scale`, then
// mirror horizontally when `flip` is set, then take the window starting at
// (offset_y, offset_x) in the resized frame. Offsets may be negative, in which
// case the destination is padded and those pixels have no source.
struct GeometricTransform {
  int src_h = 0;
  int src_w = 0;
  int dst_h = 0;
  int dst_w = 0;
  double scale = 1.0;
  bool flip = false;
  int offset_y = 0;
  int offset_x = 0;

  static GeometricTransform identity(int h, int w) { return {h, w, h, w, 1.0, false, 0, 0}; }

  int scaled_h() const;
  int scaled_w() const;
  bool is_identity() const;

  // Nearest source pixel for a destination pixel; false when padded.
  bool to_source(int y, int x, int& sy, int& sx) const;
  // Destination pixel holding a source pixel's centre; false when cropped away.
  bool to_target(int sy, int sx, int& y, int& x) const;
};

// Nearest-neighbour transport of any per-pixel map; padded pixels get `fill`.
template <class T>
Raster<T> transport(const Raster<T>& src, const GeometricTransform& t, T fill) {
  require(src.same_shape(t.src_h, t.src_w), "transport: raster does not match transform source");
  Raster<T> dst(src.channels, t.dst_h, t.dst_w, fill);
  for (int y = 0; y < t.dst_h; ++y)
    for (int x = 0; x < t.dst_w; ++x) {
      int sy = 0, sx = 0;
      if (!t.to_source(y, x, sy, sx)) continue;
      for (int c = 0; c < src.channels; ++c) dst.at(c, y, x) = src.at(c, sy, sx);
    }
  return dst;
}

// Destination pixels that have a source pixel.
Mask coverage(const GeometricTransform& t);

// Bilinear resampling of an image through a transform.
Image warp_image(const Image& src, const GeometricTransform& t, float fill = 0.0f);

struct WeakAugmentParams {
  int crop_h = 0;  // 0 keeps the full height
  int crop_w = 0;
  double flip_prob = 0.5;
};

struct StrongAugmentParams {
  double scale_min = 0.5;
  double scale_max = 2.0;
  double flip_prob = 0.5;
  double brightness = 0.25;
  double contrast = 0.25;
  double saturation = 0.25;
};

struct WeakView {
  Image image;
  std::optional<LabelMap> label;
  GeometricTransform transform;
};

struct StrongView {
  Image image;
  GeometricTransform transform;  // weak view -> strong view; photometric part not recorded
};

WeakView weak_augment(const Image& image, const std::optional<LabelMap>& label, Rng& rng,
                      const WeakAugmentParams& params = {});
StrongView strong_augment(const Image& image, Rng& rng, const StrongAugmentParams& params = {});

// Brightness, contrast and saturation jitter with factors drawn from
// [1 - s, 1 + s]; output clamped to [0,1].
void color_jitter(Image& image, Rng& rng, double brightness, double contrast, double saturation);

// Classes copied by a ClassMix mask: ceil(|present| / 2) of them. Balanced
// selection drains the tail classes first.
std::vector<int> select_mix_classes(std::span<const int> present, const std::set<int>& head, const std::set<int>& tail,
                                    bool balanced, Rng& rng);

struct MixedSample {
  Image image;
  LabelMap label;
  ScalarMap confidence;
  Mask mask;  // 1 where the pixel came from the source
};

Mask class_mask(const LabelMap& label, std::span<const int> classes);

template <class T>
Raster<T> apply_mix(const Mask& mask, const Raster<T>& src, const Raster<T>& tgt) {
  require(src.channels == tgt.channels && src.same_shape(tgt.h, tgt.w) && mask.same_shape(src.h, src.w),
          "mix: shape mismatch");
  Raster<T> out = tgt;
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < src.h; ++y)
      for (int x = 0; x < src.w; ++x)
        if (mask.at(y, x)) out.at(c, y, x) = src.at(c, y, x);
  return out;
}

MixedSample classmix(const Image& src_img, const LabelMap& src_lbl, const ScalarMap& src_conf, const Image& tgt_img,
                     const LabelMap& tgt_lbl, const ScalarMap& tgt_conf, std::span<const int> classes);

// Sorted distinct label values among pixels where `valid` is set (all pixels
// when `valid` is empty).
std::vector<int> present_classes(const LabelMap& label, const Mask* valid = nullptr, int ignore_index = -1);

}  // namespace s4al
