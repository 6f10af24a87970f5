// Copyright (c) 2026 The Disentangle Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// 8-bit PNG codec for images (RGB, v -> round((v + 1) * 127.5)) and masks
// (grayscale 0/255, read back as 1 where the mean channel level is at least 128).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <png.h>

#include "disentangle/image.hpp"
#include "disentangle/io.hpp"

namespace disentangle::png {

inline std::uint8_t to_byte(float v) {
  const double b = std::round((static_cast<double>(v) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(std::clamp(b, 0.0, 255.0));
}

inline float from_byte(std::uint8_t b) { return static_cast<float>(b / 127.5 - 1.0); }

namespace detail {

inline std::string encode(int width, int height, std::uint32_t format, const std::vector<std::uint8_t>& pixels) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + img.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + img.message);
  out.resize(size);
  return out;
}

struct Decoded {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

inline Decoded decode(std::string_view bytes, std::uint32_t format) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw IoError(std::string("malformed png: ") + img.message);
  img.format = format;
  Decoded d;
  d.width = static_cast<int>(img.width);
  d.height = static_cast<int>(img.height);
  d.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, d.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(std::string("malformed png: ") + img.message);
  }
  return d;
}

}  // namespace detail

inline std::string encode_image(const Image& x) {
  std::vector<std::uint8_t> px(x.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(x.data[i]);
  return detail::encode(x.width, x.height, PNG_FORMAT_RGB, px);
}

inline std::string encode_mask(const Mask& m) {
  std::vector<std::uint8_t> px(m.data.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = m.data[i] ? 255 : 0;
  return detail::encode(m.width, m.height, PNG_FORMAT_GRAY, px);
}

/// Accepts any PNG color type.
inline Image decode_image(std::string_view bytes) {
  const auto d = detail::decode(bytes, PNG_FORMAT_RGB);
  Image x(d.height, d.width);
  for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = from_byte(d.pixels[i]);
  return x;
}

inline Mask decode_mask(std::string_view bytes) {
  const auto d = detail::decode(bytes, PNG_FORMAT_RGB);
  Mask m(d.height, d.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const int sum = d.pixels[i * 3] + d.pixels[i * 3 + 1] + d.pixels[i * 3 + 2];
    m.data[i] = sum >= 3 * 128 ? 1 : 0;
  }
  return m;
}

inline void write_image(const Image& x, const std::filesystem::path& path) {
  write_file_atomic(path, encode_image(x));
}

inline void write_mask(const Mask& m, const std::filesystem::path& path) {
  write_file_atomic(path, encode_mask(m));
}

inline Image read_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline Mask read_mask(const std::filesystem::path& path) {
  try {
    return decode_mask(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace disentangle::png
