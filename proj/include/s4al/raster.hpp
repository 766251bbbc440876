#pragma once

#include <cstdint>
#include <vector>

#include "s4al/error.hpp"

namespace s4al {

// Planar channel-major pixel grid: data[(ch * h + y) * w + x].
template <class T>
struct Raster {
  int channels = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int c, int height, int width, T fill = T{})
      : channels(c), h(height), w(width), data(static_cast<std::size_t>(c) * height * width, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(h) * w; }
  bool empty() const { return data.empty(); }
  bool same_shape(int height, int width) const { return h == height && w == width; }

  T& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  const T& at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }

  bool operator==(const Raster&) const = default;
};

using Image = Raster<float>;               // 3 channels, values in [0,1]
using LabelMap = Raster<std::uint8_t>;     // class index per pixel
using Mask = Raster<std::uint8_t>;         // 0 / 1
using ScalarMap = Raster<float>;           // one float per pixel

}  // namespace s4al
