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

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "disentangle/gan.hpp"
#include "disentangle/image.hpp"

namespace disentangle::testing {

/// Filled axis-aligned box mask.
inline Mask box_mask(int size, int y0, int x0, int y1, int x1) {
  Mask m(size, size);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m.at(y, x) = 1;
  return m;
}

inline Mask random_box_mask(std::mt19937_64& rng, int size) {
  std::uniform_int_distribution<int> lo(0, size / 2 - 1), len(size / 4, size / 2);
  const int y0 = lo(rng), x0 = lo(rng);
  return box_mask(size, y0, x0, y0 + len(rng), x0 + len(rng));
}

inline Image random_image(std::mt19937_64& rng, int h, int w) {
  Image im(h, w);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : im.data) v = u(rng);
  return im;
}

inline AttributeTriple random_triple(std::mt19937_64& rng, const GanConfig& c) {
  AttributeTriple t;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> n;
  for (auto& v : t.color) v = u(rng);
  t.texture.resize(static_cast<std::size_t>(c.texture_dim));
  for (auto& v : t.texture) v = n(rng);
  t.mask = random_box_mask(rng, c.image_size);
  return t;
}

/// Small architecture for fast tests.
inline GanConfig tiny_config(int size = 16) {
  GanConfig c;
  c.image_size = size;
  c.texture_dim = 8;
  c.embed_dim = 8;
  c.gen_channels = 16;
  c.gen_min_channels = 8;
  c.disc_channels = 8;
  c.disc_max_channels = 16;
  return c;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("disentangle_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace disentangle::testing
