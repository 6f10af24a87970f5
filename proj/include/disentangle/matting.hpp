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

// Closed-form matting Laplacian and its quadratic structure term.
//
// For every (2r+1)x(2r+1) window w_k lying fully inside the image, with
// window mean mu_k and population covariance Sigma_k of the RGB values,
//
//   L_ij += delta_ij - (1 + (x_i - mu_k)^T (Sigma_k + eps/|w_k| I)^-1 (x_j - mu_k)) / |w_k|
//
// for all pixel pairs (i, j) in w_k. The quadratic form v^T L v is small when
// v is locally an affine function of the colors of the image that built L.

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "disentangle/graph.hpp"
#include "disentangle/image.hpp"
#include "disentangle/sparse.hpp"
#include "disentangle/tensor.hpp"

namespace disentangle::matting {

inline constexpr int kDefaultRadius = 1;
inline constexpr double kDefaultEpsilon = 1e-5;

/// n x 3 matrix: row k holds pixel (k / W, k % W).
template <typename T>
struct FlatImage {
  int rows = 0;
  std::vector<T> data;

  T& at(int row, int ch) { return data[static_cast<std::size_t>(row) * 3 + ch]; }
  T at(int row, int ch) const { return data[static_cast<std::size_t>(row) * 3 + ch]; }
};

template <typename T = double>
FlatImage<T> flatten_image(const Image& x) {
  FlatImage<T> out{static_cast<int>(x.pixels()), {}};
  out.data.assign(x.data.begin(), x.data.end());
  return out;
}

template <typename T>
Image unflatten_image(const FlatImage<T>& v, int height, int width) {
  if (static_cast<std::size_t>(v.rows) != static_cast<std::size_t>(height) * width)
    throw std::invalid_argument("unflatten: " + std::to_string(v.rows) + " rows for a " +
                                std::to_string(height) + "x" + std::to_string(width) + " image");
  Image img(height, width);
  for (std::size_t i = 0; i < v.data.size(); ++i) img.data[i] = static_cast<float>(v.data[i]);
  return img;
}

namespace detail {

// Lower Cholesky factor of a symmetric positive definite 3x3 matrix.
inline std::array<double, 9> cholesky3(const std::array<double, 9>& a) {
  std::array<double, 9> l{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j <= i; ++j) {
      double s = a[i * 3 + j];
      for (int k = 0; k < j; ++k) s -= l[i * 3 + k] * l[j * 3 + k];
      if (i == j) {
        if (!(s > 0.0) || !std::isfinite(s))
          throw std::domain_error("matting: singular regularized window covariance");
        l[i * 3 + i] = std::sqrt(s);
      } else {
        l[i * 3 + j] = s / l[j * 3 + j];
      }
    }
  return l;
}

// Solves l y = d by forward substitution.
inline std::array<double, 3> forward3(const std::array<double, 9>& l, const std::array<double, 3>& d) {
  std::array<double, 3> y{};
  y[0] = d[0] / l[0];
  y[1] = (d[1] - l[3] * y[0]) / l[4];
  y[2] = (d[2] - l[6] * y[0] - l[7] * y[1]) / l[8];
  return y;
}

}  // namespace detail

/// Builds the Laplacian from an image given as a pixel accessor
/// `color(p, ch)` over p in [0, H*W).
template <typename T, typename ColorFn>
SparseSymmetricMatrix<T> build_laplacian(int height, int width, ColorFn&& color, int radius,
                                         double epsilon) {
  if (radius < 1) throw std::invalid_argument("matting: window radius must be >= 1");
  if (!(epsilon > 0)) throw std::invalid_argument("matting: epsilon must be positive");
  const int side = 2 * radius + 1;
  if (height < side || width < side)
    throw std::invalid_argument("matting: image " + std::to_string(height) + "x" +
                                std::to_string(width) + " smaller than a " + std::to_string(side) +
                                "x" + std::to_string(side) + " window");
  const int n = height * width;
  const int wsize = side * side;

  // Row p couples to the box covered by every full window containing p.
  std::vector<int> box_y0(n), box_x0(n), box_w(n);
  SparseSymmetricMatrix<T> L;
  L.n = n;
  L.row_offsets.assign(static_cast<std::size_t>(n) + 1, 0);
  auto center_range = [radius](int pos, int extent, int& lo, int& hi) {
    lo = std::max(radius, pos - radius);
    hi = std::min(extent - 1 - radius, pos + radius);
  };
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int cy0, cy1, cx0, cx1;
      center_range(y, height, cy0, cy1);
      center_range(x, width, cx0, cx1);
      const int p = y * width + x;
      box_y0[p] = cy0 - radius;
      box_x0[p] = cx0 - radius;
      box_w[p] = (cx1 + radius) - box_x0[p] + 1;
      const int box_h = (cy1 + radius) - box_y0[p] + 1;
      L.row_offsets[static_cast<std::size_t>(p) + 1] =
          L.row_offsets[static_cast<std::size_t>(p)] + static_cast<std::size_t>(box_h) * box_w[p];
    }
  L.columns.resize(L.row_offsets.back());
  L.values.assign(L.row_offsets.back(), T(0));
  for (int p = 0; p < n; ++p) {
    std::size_t k = L.row_offsets[static_cast<std::size_t>(p)];
    const std::size_t len = L.row_length(p);
    const int bw = box_w[p];
    for (std::size_t j = 0; j < len; ++j, ++k) {
      const int yy = box_y0[p] + static_cast<int>(j) / bw;
      const int xx = box_x0[p] + static_cast<int>(j) % bw;
      L.columns[k] = yy * width + xx;
    }
  }
  auto slot = [&](int row, int col) -> T& {
    const int yy = col / width - box_y0[row];
    const int xx = col % width - box_x0[row];
    return L.values[L.row_offsets[static_cast<std::size_t>(row)] +
                    static_cast<std::size_t>(yy) * box_w[row] + xx];
  };

  std::vector<int> idx(static_cast<std::size_t>(wsize));
  std::vector<std::array<double, 3>> dev(static_cast<std::size_t>(wsize));
  std::vector<std::array<double, 3>> proj(static_cast<std::size_t>(wsize));
  const double inv_size = 1.0 / wsize;
  for (int cy = radius; cy < height - radius; ++cy)
    for (int cx = radius; cx < width - radius; ++cx) {
      std::array<double, 3> mu{0, 0, 0};
      int q = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx, ++q) {
          const int p = (cy + dy) * width + (cx + dx);
          idx[q] = p;
          for (int c = 0; c < 3; ++c) {
            dev[q][c] = static_cast<double>(color(p, c));
            mu[c] += dev[q][c];
          }
        }
      for (int c = 0; c < 3; ++c) mu[c] *= inv_size;
      std::array<double, 9> cov{};
      for (int i = 0; i < wsize; ++i) {
        for (int c = 0; c < 3; ++c) dev[i][c] -= mu[c];
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) cov[r * 3 + c] += dev[i][r] * dev[i][c];
      }
      for (double& v : cov) v *= inv_size;
      for (int c = 0; c < 3; ++c) cov[c * 4] += epsilon * inv_size;
      // With cov = l l^T the quadratic d_i^T cov^-1 d_j is the dot product of l^-1 d_i and l^-1 d_j.
      const auto l = detail::cholesky3(cov);
      for (int i = 0; i < wsize; ++i) proj[i] = detail::forward3(l, dev[i]);
      for (int i = 0; i < wsize; ++i)
        for (int j = i; j < wsize; ++j) {
          const double quad = proj[i][0] * proj[j][0] + proj[i][1] * proj[j][1] + proj[i][2] * proj[j][2];
          const T value = static_cast<T>((i == j ? 1.0 : 0.0) - (1.0 + quad) * inv_size);
          slot(idx[i], idx[j]) += value;
          if (i != j) slot(idx[j], idx[i]) += value;
        }
    }
  return L;
}

template <typename T = double>
SparseSymmetricMatrix<T> matting_laplacian(const Image& x, int radius = kDefaultRadius,
                                           double epsilon = kDefaultEpsilon) {
  return build_laplacian<T>(
      x.height, x.width, [&](int p, int c) { return x.data[static_cast<std::size_t>(p) * 3 + c]; },
      radius, epsilon);
}

/// Laplacian of sample `index` of an NCHW tensor.
template <typename T>
SparseSymmetricMatrix<T> matting_laplacian(const Tensor<T>& batch, int index,
                                           int radius = kDefaultRadius,
                                           double epsilon = kDefaultEpsilon) {
  if (batch.rank() != 4 || batch.dim(1) != 3)
    throw std::invalid_argument("matting: expected [B,3,H,W], got " + shape_str(batch.shape()));
  const int h = batch.dim(2), w = batch.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T* base = batch.data() + static_cast<std::size_t>(index) * 3 * plane;
  return build_laplacian<T>(
      h, w, [&](int p, int c) { return base[static_cast<std::size_t>(c) * plane + p]; }, radius,
      epsilon);
}

/// Tr(v^T L v), summed over the three channels of v.
template <typename T>
T quadratic_form(const SparseSymmetricMatrix<T>& L, const FlatImage<T>& v) {
  if (v.rows != L.n)
    throw std::invalid_argument("quadratic_form: " + std::to_string(v.rows) +
                                " rows against a matrix of size " + std::to_string(L.n));
  T total = 0;
  for (int i = 0; i < L.n; ++i)
    for (int c = 0; c < 3; ++c) {
      T lv = 0;
      for (std::size_t k = L.row_offsets[i]; k < L.row_offsets[i + 1]; ++k)
        lv += L.values[k] * v.at(L.columns[k], c);
      total += v.at(i, c) * lv;
    }
  return total;
}

/// 2 L v, the gradient of quadratic_form with L held fixed.
template <typename T>
FlatImage<T> quadratic_form_grad(const SparseSymmetricMatrix<T>& L, const FlatImage<T>& v) {
  if (v.rows != L.n)
    throw std::invalid_argument("quadratic_form_grad: " + std::to_string(v.rows) +
                                " rows against a matrix of size " + std::to_string(L.n));
  FlatImage<T> g{v.rows, std::vector<T>(v.data.size(), T(0))};
  for (int i = 0; i < L.n; ++i)
    for (int c = 0; c < 3; ++c) {
      T lv = 0;
      for (std::size_t k = L.row_offsets[i]; k < L.row_offsets[i + 1]; ++k)
        lv += L.values[k] * v.at(L.columns[k], c);
      g.at(i, c) = T(2) * lv;
    }
  return g;
}

/// Graph node for Tr(v^T L v) with L frozen; v is [..., n] with the pixel
/// axis last (channel planes of an NCHW sample reshaped to [3, n]).
template <typename T>
Var quadratic_form(Graph<T>& g, std::shared_ptr<const SparseSymmetricMatrix<T>> L, Var v) {
  Var lv = g.sparse_matvec(std::move(L), v);
  return g.sum(g.mul(v, lv));
}

}  // namespace disentangle::matting
