#pragma once

#include <cstdint>
#include <vector>

#include "s4al/datapool.hpp"

namespace s4al {

struct SyntheticConfig {
  int num_classes = 4;
  // Target pixel share per class; class 0 is the textured background.
  std::vector<double> shares{0.55, 0.30, 0.10, 0.05};
  int height = 64;
  int width = 64;
  int train = 200;
  int val = 30;
  int test = 50;
  int max_shapes_per_class = 6;
  // Background-labeled crosses painted in foreground colors, per image.
  int decoys = 0;
  double color_jitter = 0.05;  // per-shape color noise
  double pixel_noise = 0.03;
  std::uint64_t seed = 0;
};

// Colored geometric shapes on a textured background. Foreground class c is
// drawn as one shape family (rectangles, ellipses, bars, triangles, ...);
// shape sizes track a running deficit so that dataset-wide pixel shares
// follow `shares`. Pixel values are multiples of 1/255 so the dataset
// survives an 8-bit round trip unchanged.
Dataset generate_synthetic(const SyntheticConfig& config);

}  // namespace s4al
