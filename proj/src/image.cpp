// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace asplat {

double image_linf(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("image size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

Image quantize8(const Image& img) {
  Image out(img.width, img.height);
  for (size_t i = 0; i < img.data.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, img.data[i]));
    out.data[i] = std::round(v * 255.0) / 255.0;
  }
  return out;
}

}  // namespace asplat
