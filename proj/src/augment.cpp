#include "s4al/augment.hpp"

#include <algorithm>
#include <cmath>

namespace s4al {

int GeometricTransform::scaled_h() const { return std::max(1, static_cast<int>(std::lround(src_h * scale))); }
int GeometricTransform::scaled_w() const { return std::max(1, static_cast<int>(std::lround(src_w * scale))); }

bool GeometricTransform::is_identity() const {
  return scaled_h() == src_h && scaled_w() == src_w && !flip && offset_y == 0 && offset_x == 0 && dst_h == src_h &&
         dst_w == src_w;
}

bool GeometricTransform::to_source(int y, int x, int& sy, int& sx) const {
  const int sh = scaled_h();
  const int sw = scaled_w();
  const int u = y + offset_y;
  int v = x + offset_x;
  if (u < 0 || u >= sh || v < 0 || v >= sw) return false;
  if (flip) v = sw - 1 - v;
  sy = std::min(src_h - 1, static_cast<int>(std::floor((u + 0.5) * src_h / sh)));
  sx = std::min(src_w - 1, static_cast<int>(std::floor((v + 0.5) * src_w / sw)));
  return true;
}

bool GeometricTransform::to_target(int sy, int sx, int& y, int& x) const {
  const int sh = scaled_h();
  const int sw = scaled_w();
  const int u = std::min(sh - 1, static_cast<int>(std::floor((sy + 0.5) * sh / src_h)));
  int v = std::min(sw - 1, static_cast<int>(std::floor((sx + 0.5) * sw / src_w)));
  if (flip) v = sw - 1 - v;
  y = u - offset_y;
  x = v - offset_x;
  return y >= 0 && y < dst_h && x >= 0 && x < dst_w;
}

Mask coverage(const GeometricTransform& t) {
  Mask m(1, t.dst_h, t.dst_w, 0);
  for (int y = 0; y < t.dst_h; ++y)
    for (int x = 0; x < t.dst_w; ++x) {
      int sy = 0, sx = 0;
      m.at(y, x) = t.to_source(y, x, sy, sx) ? 1 : 0;
    }
  return m;
}

Image warp_image(const Image& src, const GeometricTransform& t, float fill) {
  require(src.same_shape(t.src_h, t.src_w), "warp: image does not match transform source");
  if (t.scaled_h() == t.src_h && t.scaled_w() == t.src_w) return transport(src, t, fill);
  const int sh = t.scaled_h();
  const int sw = t.scaled_w();
  const double ry = static_cast<double>(t.src_h) / sh;
  const double rx = static_cast<double>(t.src_w) / sw;
  Image dst(src.channels, t.dst_h, t.dst_w, fill);
  for (int y = 0; y < t.dst_h; ++y) {
    const int u = y + t.offset_y;
    if (u < 0 || u >= sh) continue;
    const double fy = std::clamp((u + 0.5) * ry - 0.5, 0.0, static_cast<double>(t.src_h - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, t.src_h - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < t.dst_w; ++x) {
      int v = x + t.offset_x;
      if (v < 0 || v >= sw) continue;
      if (t.flip) v = sw - 1 - v;
      const double fx = std::clamp((v + 0.5) * rx - 0.5, 0.0, static_cast<double>(t.src_w - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, t.src_w - 1);
      const float wx = static_cast<float>(fx - x0);
      for (int c = 0; c < src.channels; ++c) {
        const float top = src.at(c, y0, x0) * (1 - wx) + src.at(c, y0, x1) * wx;
        const float bot = src.at(c, y1, x0) * (1 - wx) + src.at(c, y1, x1) * wx;
        dst.at(c, y, x) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

WeakView weak_augment(const Image& image, const std::optional<LabelMap>& label, Rng& rng,
                      const WeakAugmentParams& params) {
  const int ch = params.crop_h > 0 ? params.crop_h : image.h;
  const int cw = params.crop_w > 0 ? params.crop_w : image.w;
  require(ch <= image.h && cw <= image.w, "crop larger than image");
  if (label) require(label->same_shape(image.h, image.w), "label does not match image");

  GeometricTransform t = GeometricTransform::identity(image.h, image.w);
  t.dst_h = ch;
  t.dst_w = cw;
  t.flip = rng.bernoulli(params.flip_prob);
  t.offset_y = rng.integer(0, image.h - ch);
  t.offset_x = rng.integer(0, image.w - cw);

  WeakView view;
  view.transform = t;
  view.image = transport(image, t, 0.0f);
  if (label) view.label = transport(*label, t, std::uint8_t{0});
  return view;
}

void color_jitter(Image& image, Rng& rng, double brightness, double contrast, double saturation) {
  const std::size_t n = image.pixels();
  if (brightness > 0) {
    const auto b = static_cast<float>(rng.uniform(1 - brightness, 1 + brightness));
    for (float& v : image.data) v *= b;
  }
  if (contrast > 0 && image.channels == 3) {
    const auto c = static_cast<float>(rng.uniform(1 - contrast, 1 + contrast));
    double mean = 0;
    for (std::size_t i = 0; i < n; ++i)
      mean += 0.299 * image.data[i] + 0.587 * image.data[n + i] + 0.114 * image.data[2 * n + i];
    const auto m = static_cast<float>(mean / static_cast<double>(n));
    for (float& v : image.data) v = (v - m) * c + m;
  }
  if (saturation > 0 && image.channels == 3) {
    const auto s = static_cast<float>(rng.uniform(1 - saturation, 1 + saturation));
    for (std::size_t i = 0; i < n; ++i) {
      const float g = 0.299f * image.data[i] + 0.587f * image.data[n + i] + 0.114f * image.data[2 * n + i];
      for (int c = 0; c < 3; ++c) {
        float& v = image.data[c * n + i];
        v = g + (v - g) * s;
      }
    }
  }
  for (float& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
}

StrongView strong_augment(const Image& image, Rng& rng, const StrongAugmentParams& params) {
  require(params.scale_min > 0 && params.scale_min <= params.scale_max, "invalid scale range");
  GeometricTransform t = GeometricTransform::identity(image.h, image.w);
  t.scale = rng.uniform(params.scale_min, params.scale_max);
  t.flip = rng.bernoulli(params.flip_prob);
  const int sh = t.scaled_h();
  const int sw = t.scaled_w();
  t.offset_y = sh >= image.h ? rng.integer(0, sh - image.h) : rng.integer(sh - image.h, 0);
  t.offset_x = sw >= image.w ? rng.integer(0, sw - image.w) : rng.integer(sw - image.w, 0);

  StrongView view;
  view.transform = t;
  view.image = warp_image(image, t, 0.0f);
  color_jitter(view.image, rng, params.brightness, params.contrast, params.saturation);
  return view;
}

namespace {
void shuffle(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.index(i)]);
}
}  // namespace

std::vector<int> select_mix_classes(std::span<const int> present, const std::set<int>& head, const std::set<int>& tail,
                                    bool balanced, Rng& rng) {
  (void)head;  // every class that is not tail counts as head
  require(!present.empty(), "ClassMix needs at least one present class");
  const std::size_t k = (present.size() + 1) / 2;
  std::vector<int> order;
  if (!balanced) {
    order.assign(present.begin(), present.end());
    shuffle(order, rng);
  } else {
    std::vector<int> tails, heads;
    for (int c : present) (tail.contains(c) ? tails : heads).push_back(c);
    shuffle(tails, rng);
    shuffle(heads, rng);
    order = std::move(tails);
    order.insert(order.end(), heads.begin(), heads.end());
  }
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

Mask class_mask(const LabelMap& label, std::span<const int> classes) {
  Mask m(1, label.h, label.w, 0);
  for (std::size_t i = 0; i < label.data.size(); ++i)
    m.data[i] = std::find(classes.begin(), classes.end(), label.data[i]) != classes.end() ? 1 : 0;
  return m;
}

MixedSample classmix(const Image& src_img, const LabelMap& src_lbl, const ScalarMap& src_conf, const Image& tgt_img,
                     const LabelMap& tgt_lbl, const ScalarMap& tgt_conf, std::span<const int> classes) {
  require(src_img.same_shape(tgt_img.h, tgt_img.w) && src_img.channels == tgt_img.channels &&
              src_lbl.same_shape(src_img.h, src_img.w) && tgt_lbl.same_shape(src_img.h, src_img.w) &&
              src_conf.same_shape(src_img.h, src_img.w) && tgt_conf.same_shape(src_img.h, src_img.w),
          "classmix: shape mismatch");
  MixedSample out;
  out.mask = class_mask(src_lbl, classes);
  out.image = apply_mix(out.mask, src_img, tgt_img);
  out.label = apply_mix(out.mask, src_lbl, tgt_lbl);
  out.confidence = apply_mix(out.mask, src_conf, tgt_conf);
  return out;
}

std::vector<int> present_classes(const LabelMap& label, const Mask* valid, int ignore_index) {
  std::vector<std::uint8_t> seen(256, 0);
  for (std::size_t i = 0; i < label.data.size(); ++i) {
    if (valid && !valid->data[i]) continue;
    seen[label.data[i]] = 1;
  }
  std::vector<int> out;
  for (int c = 0; c < 256; ++c)
    if (seen[c] && c != ignore_index) out.push_back(c);
  return out;
}

}  // namespace s4al
