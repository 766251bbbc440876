#include "s4al/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>

#include "s4al/rng.hpp"

namespace s4al {

namespace {

using Rgb = std::array<double, 3>;

Rgb class_color(int c, int k) {
  static constexpr std::array<Rgb, 4> kBase{{{0.42, 0.48, 0.40}, {0.62, 0.36, 0.30}, {0.30, 0.42, 0.68}, {0.70, 0.62, 0.25}}};
  if (c < static_cast<int>(kBase.size())) return kBase[c];
  // HSV wheel for any further classes.
  const double hue = std::fmod(0.13 + static_cast<double>(c) / k, 1.0) * 6.0;
  const int sector = static_cast<int>(hue);
  const double f = hue - sector, v = 0.65, s = 0.5;
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Canvas {
  int h, w;
  std::vector<double> rgb;  // interleaved
  LabelMap label;

  Canvas(int height, int width) : h(height), w(width), rgb(static_cast<std::size_t>(height) * width * 3), label(1, height, width, 0) {}
  double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
};

void paint_background(Canvas& cv, const Rgb& base, Rng& rng) {
  const double gy = rng.uniform(-0.12, 0.12), gx = rng.uniform(-0.12, 0.12);
  std::array<std::array<double, 4>, 3> waves{};
  for (auto& wv : waves) wv = {rng.uniform(0.05, 0.35), rng.uniform(0.05, 0.35), rng.uniform(0, 2 * std::numbers::pi), rng.uniform(0.02, 0.06)};
  for (int y = 0; y < cv.h; ++y)
    for (int x = 0; x < cv.w; ++x) {
      double shade = gy * (y / static_cast<double>(cv.h) - 0.5) + gx * (x / static_cast<double>(cv.w) - 0.5);
      for (const auto& wv : waves) shade += wv[3] * std::sin(wv[0] * y + wv[1] * x + wv[2]);
      for (int c = 0; c < 3; ++c) cv.at(y, x, c) = base[c] + shade;
    }
}

// Paints one shape of the given family with roughly `area` pixels; returns
// the number of pixels that became class `cls`.
std::size_t paint_shape(Canvas& cv, int family, double area, int cls, const Rgb& color, Rng& rng) {
  const double cy = rng.uniform(0, cv.h), cx = rng.uniform(0, cv.w);
  const double shade_y = rng.uniform(-0.08, 0.08), shade_x = rng.uniform(-0.08, 0.08);
  std::size_t changed = 0;
  auto put = [&](int y, int x) {
    if (y < 0 || y >= cv.h || x < 0 || x >= cv.w) return;
    if (cv.label.at(y, x) != cls) ++changed;
    cv.label.at(y, x) = static_cast<std::uint8_t>(cls);
    const double s = shade_y * (y - cy) / cv.h * 4 + shade_x * (x - cx) / cv.w * 4;
    for (int c = 0; c < 3; ++c) cv.at(y, x, c) = color[c] + s;
  };
  switch (family) {
    case 0: {  // axis-aligned rectangle
      const double aspect = rng.uniform(0.5, 2.0);
      const double hh = std::sqrt(area / aspect), ww = area / hh;
      for (int y = static_cast<int>(cy - hh / 2); y < static_cast<int>(cy + hh / 2); ++y)
        for (int x = static_cast<int>(cx - ww / 2); x < static_cast<int>(cx + ww / 2); ++x) put(y, x);
      break;
    }
    case 1: {  // ellipse
      const double aspect = rng.uniform(0.6, 1.6);
      const double ry = std::sqrt(area / (std::numbers::pi * aspect)), rx = ry * aspect;
      for (int y = static_cast<int>(cy - ry) - 1; y <= static_cast<int>(cy + ry) + 1; ++y)
        for (int x = static_cast<int>(cx - rx) - 1; x <= static_cast<int>(cx + rx) + 1; ++x) {
          const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
          if (dy * dy + dx * dx <= 1.0) put(y, x);
        }
      break;
    }
    case 2: {  // thin vertical bar
      const int thick = rng.integer(2, 3);
      const int len = std::clamp(static_cast<int>(area / thick), 3, cv.h);
      const int y0 = static_cast<int>(cy) - len / 2;
      for (int y = y0; y < y0 + len; ++y)
        for (int x = static_cast<int>(cx); x < static_cast<int>(cx) + thick; ++x) put(y, x);
      break;
    }
    case 4: {  // plus sign, only used for decoys
      const double arm = std::sqrt(area / 5.0);
      const int a = std::max(1, static_cast<int>(arm));
      const int y0 = static_cast<int>(cy), x0 = static_cast<int>(cx);
      for (int y = y0 - a - a / 2; y < y0 + a + (a + 1) / 2; ++y)
        for (int x = x0 - a / 2; x < x0 + (a + 1) / 2; ++x) put(y, x);
      for (int y = y0 - a / 2; y < y0 + (a + 1) / 2; ++y)
        for (int x = x0 - a - a / 2; x < x0 + a + (a + 1) / 2; ++x) put(y, x);
      break;
    }
    default: {  // upright isosceles triangle
      const double height = std::sqrt(area * rng.uniform(1.4, 2.6));
      const double base = 2 * area / height;
      const int y0 = static_cast<int>(cy - height / 2);
      for (int y = y0; y < static_cast<int>(cy + height / 2); ++y) {
        const double half = base / 2 * (y - y0 + 0.5) / height;
        for (int x = static_cast<int>(cx - half); x < static_cast<int>(cx + half); ++x) put(y, x);
      }
      break;
    }
  }
  return changed;
}

Sample make_sample(const SyntheticConfig& cfg, const std::string& id, std::vector<double>& deficit, Rng& rng) {
  const int k = cfg.num_classes;
  const double area = static_cast<double>(cfg.height) * cfg.width;
  Canvas cv(cfg.height, cfg.width);
  paint_background(cv, class_color(0, k), rng);
  for (int n = 0; n < cfg.decoys; ++n) {
    Rgb color = class_color(rng.integer(1, k - 1), k);
    for (double& v : color) v += rng.normal(0.0, cfg.color_jitter);
    paint_shape(cv, 4, rng.uniform(0.004, 0.015) * area, 0, color, rng);
  }
  for (int c = 1; c < k; ++c) {
    const double target = std::clamp(cfg.shares[c] * area + 0.5 * deficit[c], 0.0, 0.6 * area);
    const Rgb base = class_color(c, k);
    double painted = 0;
    for (int n = 0; n < cfg.max_shapes_per_class && painted < 0.95 * target; ++n) {
      const double remaining = target - painted;
      const double a = std::max(6.0, n + 1 == cfg.max_shapes_per_class ? remaining : remaining * rng.uniform(0.35, 1.0));
      Rgb color = base;
      for (double& v : color) v += rng.normal(0.0, cfg.color_jitter);
      painted += static_cast<double>(paint_shape(cv, (c - 1) % 4, a, c, color, rng));
    }
  }
  std::vector<double> realized(k, 0.0);
  for (std::uint8_t v : cv.label.data) realized[v] += 1;
  for (int c = 0; c < k; ++c) deficit[c] += cfg.shares[c] * area - realized[c];

  const double gain = rng.uniform(0.8, 1.1);
  Sample s;
  s.id = id;
  s.label = cv.label;
  s.image = Image(3, cfg.height, cfg.width);
  for (int y = 0; y < cfg.height; ++y)
    for (int x = 0; x < cfg.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp((cv.at(y, x, c) + rng.normal(0.0, cfg.pixel_noise)) * gain, 0.0, 1.0);
        s.image.at(c, y, x) = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
      }
  return s;
}

}  // namespace

Dataset generate_synthetic(const SyntheticConfig& cfg) {
  require(cfg.num_classes >= 3, "synthetic data needs at least 3 classes");
  require(cfg.num_classes < 255, "too many classes for 8-bit labels");
  require(static_cast<int>(cfg.shares.size()) == cfg.num_classes, "one share per class required");
  require(cfg.height >= 8 && cfg.width >= 8, "synthetic images must be at least 8x8");
  require(cfg.train >= 1 && cfg.val >= 0 && cfg.test >= 0, "invalid split sizes");
  require(cfg.max_shapes_per_class >= 1, "need at least one shape per class");
  require(cfg.decoys >= 0 && cfg.color_jitter >= 0 && cfg.pixel_noise >= 0, "negative synthetic noise settings");
  for (double s : cfg.shares) require(s > 0.0, "class shares must be positive");
  const double sum = std::accumulate(cfg.shares.begin(), cfg.shares.end(), 0.0);
  require(std::abs(sum - 1.0) < 1e-6, "class shares must sum to 1");
  require(cfg.shares[0] >= 0.1, "background share below 0.1 cannot be realised");
  for (int c = 1; c < cfg.num_classes; ++c) require(cfg.shares[c] <= 0.6, "foreground share above 0.6 cannot be realised");

  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.ignore_index = 255;
  ds.height = cfg.height;
  ds.width = cfg.width;
  const std::pair<std::vector<Sample>*, int> splits[] = {{&ds.train, cfg.train}, {&ds.val, cfg.val}, {&ds.test, cfg.test}};
  const char* names[] = {"train", "val", "test"};
  for (std::size_t s = 0; s < 3; ++s) {
    Rng rng = Rng::derive(cfg.seed, {0x73796e74ULL, s});
    std::vector<double> deficit(cfg.num_classes, 0.0);
    for (int i = 0; i < splits[s].second; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "%s_%04d", names[s], i);
      splits[s].first->push_back(make_sample(cfg, id, deficit, rng));
    }
  }
  return ds;
}

}  // namespace s4al
