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

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "disentangle/matting.hpp"

namespace disentangle::testing {

/// Dense n x n matrix, row-major.
struct Dense {
  int n = 0;
  std::vector<double> a;
  double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
  double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
};

/// Solves M z = b for a 3x3 system by Gaussian elimination with partial pivoting.
inline std::array<double, 3> solve3(std::array<std::array<double, 3>, 3> m, std::array<double, 3> b) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(m[r][col]) > std::abs(m[piv][col])) piv = r;
    std::swap(m[col], m[piv]);
    std::swap(b[col], b[piv]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = m[r][col] / m[col][col];
      for (int c = col; c < 3; ++c) m[r][c] -= f * m[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, 3> z{};
  for (int r = 2; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < 3; ++c) s -= m[r][c] * z[c];
    z[r] = s / m[r][r];
  }
  return z;
}

/// Brute-force matting Laplacian: explicit loop over windows, then over
/// every ordered pixel pair in the window, accumulated into a dense matrix.
inline Dense dense_matting_oracle(const Image& x, int radius, double eps) {
  const int h = x.height, w = x.width, n = h * w;
  const int side = 2 * radius + 1;
  const double size = side * side;
  Dense L{n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  for (int cy = radius; cy + radius < h; ++cy)
    for (int cx = radius; cx + radius < w; ++cx) {
      std::vector<int> pix;
      for (int y = cy - radius; y <= cy + radius; ++y)
        for (int xx = cx - radius; xx <= cx + radius; ++xx) pix.push_back(y * w + xx);
      auto val = [&](int p, int c) { return static_cast<double>(x.data[static_cast<std::size_t>(p) * 3 + c]); };
      std::array<double, 3> mu{};
      for (int p : pix)
        for (int c = 0; c < 3; ++c) mu[c] += val(p, c) / size;
      std::array<std::array<double, 3>, 3> cov{};
      for (int p : pix)
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) cov[r][c] += (val(p, r) - mu[r]) * (val(p, c) - mu[c]) / size;
      for (int c = 0; c < 3; ++c) cov[c][c] += eps / size;
      for (int i : pix) {
        std::array<double, 3> di{};
        for (int c = 0; c < 3; ++c) di[c] = val(i, c) - mu[c];
        for (int j : pix) {
          std::array<double, 3> dj{};
          for (int c = 0; c < 3; ++c) dj[c] = val(j, c) - mu[c];
          const auto z = solve3(cov, dj);
          const double quad = di[0] * z[0] + di[1] * z[1] + di[2] * z[2];
          L.at(i, j) += (i == j ? 1.0 : 0.0) - (1.0 + quad) / size;
        }
      }
    }
  return L;
}

/// Random test image drawn from one of several families: uniform noise,
/// near-constant, two-tone and smooth gradients.
inline Image matting_test_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Image x(h, w);
  const int family = static_cast<int>(rng() % 4);
  std::array<double, 3> a{u(rng), u(rng), u(rng)}, b{u(rng), u(rng), u(rng)};
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < 3; ++c) {
        double v = 0;
        switch (family) {
          case 0: v = u(rng); break;
          case 1: v = a[c] + 1e-3 * u(rng); break;
          case 2: v = ((y + xx) % 3 == 0) ? a[c] : b[c]; break;
          default: v = a[c] * (y + 1.0) / h + b[c] * (xx + 1.0) / w; break;
        }
        x.at(y, xx, c) = static_cast<float>(std::clamp(v, -1.0, 1.0));
      }
  return x;
}

struct MattingSuiteReport {
  int images = 0;
  int dense_cases = 0;
  bool symmetric = true;
  bool sparsity_ok = true;
  double max_row_sum = 0;
  double worst_psd = 0;  // min over draws of vLv / |v|^2, clipped at 0 from above
  double max_offset_change = 0;
  double max_dense_error = 0;
  double seconds = 0;

  bool pass() const {
    return images >= 50 && dense_cases > 0 && symmetric && sparsity_ok && max_row_sum < 1e-8 &&
           worst_psd >= -1e-8 && max_offset_change < 1e-8 && max_dense_error < 1e-8 && seconds < 60.0;
  }
};

/// Structural checks on random images up to 16x16 and the dense-oracle
/// comparison on random 5x5 and 6x6 images.
inline MattingSuiteReport run_matting_suite(std::uint64_t seed, int images = 60, int dense_cases = 40) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> side(3, 16);
  MattingSuiteReport r;
  const int r1 = matting::kDefaultRadius;
  const std::size_t max_row = static_cast<std::size_t>((4 * r1 + 1) * (4 * r1 + 1));
  for (int k = 0; k < images; ++k) {
    const Image x = matting_test_image(rng, side(rng), side(rng));
    const auto L = matting::matting_laplacian(x);
    ++r.images;
    for (int i = 0; i < L.n; ++i) {
      if (L.row_length(i) > max_row) r.sparsity_ok = false;
      double s = 0;
      for (std::size_t q = L.row_offsets[i]; q < L.row_offsets[i + 1]; ++q) {
        s += L.values[q];
        if (q > L.row_offsets[i] && L.columns[q] <= L.columns[q - 1]) r.sparsity_ok = false;
        if (L.at(L.columns[q], i) != L.values[q]) r.symmetric = false;
      }
      r.max_row_sum = std::max(r.max_row_sum, std::abs(s));
    }
    for (int draw = 0; draw < 3; ++draw) {
      matting::FlatImage<double> v{L.n, std::vector<double>(static_cast<std::size_t>(L.n) * 3)};
      double norm2 = 0;
      for (auto& e : v.data) {
        e = u(rng);
        norm2 += e * e;
      }
      const double q = matting::quadratic_form(L, v);
      r.worst_psd = std::min(r.worst_psd, q / norm2);
      auto shifted = v;
      const std::array<double, 3> off{u(rng), u(rng), u(rng)};
      for (int i = 0; i < v.rows; ++i)
        for (int c = 0; c < 3; ++c) shifted.at(i, c) += off[c];
      r.max_offset_change = std::max(r.max_offset_change, std::abs(matting::quadratic_form(L, shifted) - q));
    }
  }
  for (int k = 0; k < dense_cases; ++k) {
    const int h = 5 + static_cast<int>(rng() % 2), w = 5 + static_cast<int>(rng() % 2);
    const Image x = matting_test_image(rng, h, w);
    const auto L = matting::matting_laplacian(x);
    const Dense D = dense_matting_oracle(x, r1, matting::kDefaultEpsilon);
    ++r.dense_cases;
    for (int i = 0; i < D.n; ++i)
      for (int j = 0; j < D.n; ++j) r.max_dense_error = std::max(r.max_dense_error, std::abs(L.at(i, j) - D.at(i, j)));
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace disentangle::testing
