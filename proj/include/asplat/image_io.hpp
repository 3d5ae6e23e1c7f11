// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "asplat/image.hpp"

namespace asplat {

/// Reads an 8-bit RGB PNG (palette/gray/alpha inputs are converted) into
/// channels in [0, 1]. Throws std::runtime_error on missing files, decode
/// failures, or a non-.png extension (the message names the format).
Image read_image(const std::string& path);

/// Quantizes channels to 8 bits -- round(clamp(v, 0, 1) * 255) -- and writes
/// an RGB PNG, so read_image(write_image(x)) == round(x * 255) / 255
/// elementwise for x already in range. Throws std::runtime_error on
/// non-finite pixels, unwritable paths, or a non-.png extension.
void write_image(const Image& img, const std::string& path);

}  // namespace asplat
