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

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "disentangle/tensor.hpp"

namespace disentangle {

using Color = std::array<double, 3>;

/// White, the canvas color on the [-1, 1] scale.
inline constexpr Color kWhite{1.0, 1.0, 1.0};

/// "#rrggbb" (leading '#' optional) to [-1, 1] per channel via v / 127.5 - 1.
inline Color parse_hex_color(std::string_view text) {
  if (text.starts_with('#')) text.remove_prefix(1);
  auto nibble = [&](char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw std::invalid_argument("invalid hex color '#" + std::string(text) + "'");
  };
  if (text.size() != 6) throw std::invalid_argument("hex color must have the form #rrggbb");
  Color c;
  for (int i = 0; i < 3; ++i) c[i] = (nibble(text[2 * i]) * 16 + nibble(text[2 * i + 1])) / 127.5 - 1.0;
  return c;
}

/// H x W x 3 image, channels interleaved, values nominally in [-1, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }

  static Image filled(int h, int w, const Color& c) {
    Image img(h, w);
    for (std::size_t p = 0; p < img.pixels(); ++p)
      for (int ch = 0; ch < 3; ++ch) img.data[p * 3 + ch] = static_cast<float>(c[ch]);
    return img;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// H x W binary mask stored as 0/1 bytes.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::size_t pixels() const { return data.size(); }
  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto v : data) n += v != 0;
    return n;
  }
  double coverage() const { return data.empty() ? 0.0 : static_cast<double>(count()) / data.size(); }

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Batch of images as an NCHW tensor.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw std::invalid_argument("empty image batch");
  const int h = images[0].height, w = images[0].width;
  Tensor<T> out({static_cast<int>(images.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b].height != h || images[b].width != w)
      throw std::invalid_argument("image batch with mixed sizes");
    for (std::size_t p = 0; p < plane; ++p)
      for (int c = 0; c < 3; ++c)
        out[(b * 3 + c) * plane + p] = static_cast<T>(images[b].data[p * 3 + c]);
  }
  return out;
}

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
  return images_to_tensor<T>(std::span<const Image>(&image, 1));
}

/// Sample `index` of an NCHW tensor with 3 channels.
template <typename T>
Image tensor_to_image(const Tensor<T>& t, int index = 0) {
  if (t.rank() != 4 || t.dim(1) != 3) throw std::invalid_argument("expected [B,3,H,W] tensor");
  const int h = t.dim(2), w = t.dim(3);
  Image img(h, w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      img.data[p * 3 + c] = static_cast<float>(t[(static_cast<std::size_t>(index) * 3 + c) * plane + p]);
  return img;
}

/// Batch of masks as a [B,1,H,W] tensor of 0/1.
template <typename T>
Tensor<T> masks_to_tensor(std::span<const Mask> masks) {
  if (masks.empty()) throw std::invalid_argument("empty mask batch");
  const int h = masks[0].height, w = masks[0].width;
  Tensor<T> out({static_cast<int>(masks.size()), 1, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t b = 0; b < masks.size(); ++b) {
    if (masks[b].height != h || masks[b].width != w)
      throw std::invalid_argument("mask batch with mixed sizes");
    for (std::size_t p = 0; p < plane; ++p) out[b * plane + p] = masks[b].data[p] ? T(1) : T(0);
  }
  return out;
}

template <typename T>
Tensor<T> mask_to_tensor(const Mask& mask) {
  return masks_to_tensor<T>(std::span<const Mask>(&mask, 1));
}

}  // namespace disentangle
