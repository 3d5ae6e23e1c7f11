// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "asplat/geom.hpp"

namespace asplat {

/// RGB image with double precision channels, row-major, interleaved.
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;  // (y * width + x) * 3 + c

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.0) {}

  double& at(int x, int y, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  Vec3 pixel(int x, int y) const { return Vec3(at(x, y, 0), at(x, y, 1), at(x, y, 2)); }
  void set_pixel(int x, int y, const Vec3& rgb) {
    for (int c = 0; c < 3; ++c) at(x, y, c) = rgb[c];
  }
  size_t size() const { return data.size(); }
};

/// Largest absolute per-channel difference; images must share dimensions.
double image_linf(const Image& a, const Image& b);

/// Rounds every channel to the nearest of 256 levels on [0, 1], clamping
/// out-of-range values first. This is the store-and-reload semantics of the
/// 8-bit image files, applied in memory.
Image quantize8(const Image& img);

}  // namespace asplat
