// Copyright Contributors to the asplat Project
// SPDX-License-Identifier: Apache-2.0
#include "asplat/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace asplat {

namespace {

void require_png_extension(const std::string& path) {
  const size_t dot = path.find_last_of('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext != ".png")
    throw std::runtime_error("unsupported image format '" +
                             (ext.empty() ? std::string("<none>") : ext) +
                             "' for '" + path + "': only 8-bit RGB PNG is supported");
}

}  // namespace

Image read_image(const std::string& path) {
  require_png_extension(path);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw std::runtime_error("cannot read PNG '" + path + "': " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr))
    throw std::runtime_error("cannot decode PNG '" + path + "': " + png.message);
  Image img(static_cast<int>(png.width), static_cast<int>(png.height));
  for (size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0;
  return img;
}

void write_image(const Image& img, const std::string& path) {
  require_png_extension(path);
  if (img.width < 1 || img.height < 1)
    throw std::runtime_error("cannot write an empty image to '" + path + "'");
  std::vector<png_byte> bytes(img.data.size());
  for (size_t i = 0; i < bytes.size(); ++i) {
    const double v = img.data[i];
    if (!std::isfinite(v))
      throw std::runtime_error("non-finite pixel value; refusing to write '" + path + "'");
    bytes[i] = static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path + "': " + png.message);
}

}  // namespace asplat
