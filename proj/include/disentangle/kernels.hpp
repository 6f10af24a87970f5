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

// Dense numeric kernels behind the graph operators. Layouts are NCHW for
// images and [Cout, Cin, K, K] for convolution weights; transposed
// convolutions take [Cin, Cout, K, K].

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "disentangle/tensor.hpp"

namespace disentangle::kernels {

inline constexpr double kLeakySlope = 0.2;

inline Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const int da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const int db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides of `in` when read as if broadcast to `out` (zero along broadcast axes).
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  const std::size_t offset = out.size() - in.size();
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    if (in[i] != 1) {
      if (in[i] != out[i + offset])
        throw ShapeError("shape " + shape_str(in) + " does not broadcast to " + shape_str(out));
      strides[i + offset] = stride;
    } else if (out[i + offset] < 1) {
      throw ShapeError("bad broadcast target " + shape_str(out));
    }
    stride *= static_cast<std::size_t>(in[i]);
  }
  return strides;
}

/// Visits every output index of `out` with the matching linear offsets of two
/// broadcast operands.
template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t total = numel(out);
  const std::size_t inner = static_cast<std::size_t>(out[rank - 1]);
  const std::size_t ia_step = sa[rank - 1];
  const std::size_t ib_step = sb[rank - 1];
  std::vector<int> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    for (std::size_t k = 0; k < inner; ++k) f(o + k, ia + k * ia_step, ib + k * ib_step);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * static_cast<std::size_t>(out[d]);
      ib -= sb[d] * static_cast<std::size_t>(out[d]);
      idx[d] = 0;
    }
  }
}

template <typename T, typename F>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, F&& f) {
  if (a.shape() == b.shape()) {
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  const Shape shape = broadcast_shapes(a.shape(), b.shape());
  Tensor<T> out(shape);
  const auto sa = broadcast_strides(a.shape(), shape);
  const auto sb = broadcast_strides(b.shape(), shape);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for_each_broadcast(shape, sa, sb,
                     [&](std::size_t o, std::size_t ia, std::size_t ib) { po[o] = f(pa[ia], pb[ib]); });
  return out;
}

template <typename T, typename F>
Tensor<T> unary(const Tensor<T>& a, F&& f) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

/// Sums `x` down to `target`, the inverse of broadcasting.
template <typename T>
Tensor<T> sum_to(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  const auto st = broadcast_strides(target, x.shape());
  const std::vector<std::size_t> unit(x.shape().size(), 0);
  Tensor<T> out(target);
  const T* px = x.data();
  T* po = out.data();
  for_each_broadcast(x.shape(), st, unit,
                     [&](std::size_t i, std::size_t o, std::size_t) { po[o] += px[i]; });
  return out;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target) {
  if (x.shape() == target) return x;
  const auto sx = broadcast_strides(x.shape(), target);
  const std::vector<std::size_t> unit(target.size(), 0);
  Tensor<T> out(target);
  const T* px = x.data();
  T* po = out.data();
  for_each_broadcast(target, sx, unit,
                     [&](std::size_t o, std::size_t i, std::size_t) { po[o] = px[i]; });
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw ShapeError("matmul needs rank-2 operands, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  const int m = trans_a ? a.dim(1) : a.dim(0);
  const int ka = trans_a ? a.dim(0) : a.dim(1);
  const int kb = trans_b ? b.dim(1) : b.dim(0);
  const int n = trans_b ? b.dim(0) : b.dim(1);
  if (ka != kb)
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) + (trans_b ? "^T" : ""));
  Tensor<T> out({m, n});
  const int lda = a.dim(1);
  const int ldb = b.dim(1);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (int i = 0; i < m; ++i) {
    T* row = po + static_cast<std::size_t>(i) * n;
    for (int k = 0; k < ka; ++k) {
      const T av = trans_a ? pa[static_cast<std::size_t>(k) * lda + i]
                           : pa[static_cast<std::size_t>(i) * lda + k];
      if (av == T(0)) continue;
      if (!trans_b) {
        const T* brow = pb + static_cast<std::size_t>(k) * ldb;
        for (int j = 0; j < n; ++j) row[j] += av * brow[j];
      } else {
        for (int j = 0; j < n; ++j) row[j] += av * pb[static_cast<std::size_t>(j) * ldb + k];
      }
    }
  }
  return out;
}

struct ConvGeometry {
  int batch, in_c, in_h, in_w, out_c, out_h, out_w, kernel, stride, pad;
};

/// Range [lo, hi) of output positions o with 0 <= o*stride - pad + k < extent.
inline void valid_range(int extent, int out_extent, int k, int stride, int pad, int& lo, int& hi) {
  // o*stride >= pad - k
  const int need = pad - k;
  lo = need <= 0 ? 0 : (need + stride - 1) / stride;
  // o*stride <= extent - 1 + pad - k
  const int top = extent - 1 + pad - k;
  hi = top < 0 ? 0 : top / stride + 1;
  lo = std::min(lo, out_extent);
  hi = std::min(hi, out_extent);
  if (hi < lo) hi = lo;
}

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  const int span = in + 2 * pad - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace detail {

/// C[m x n] += A[m x k] * B[k x n], all row-major with leading dimensions.
/// Columns are processed in blocks and rows four at a time.
template <typename T>
void gemm_acc(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  constexpr int kBlock = 512;
  for (int j0 = 0; j0 < n; j0 += kBlock) {
    const int jn = std::min(kBlock, n - j0);
    int i = 0;
    for (; i + 4 <= m; i += 4) {
      T* __restrict c0 = c + static_cast<std::size_t>(i) * ldc + j0;
      T* __restrict c1 = c0 + ldc;
      T* __restrict c2 = c1 + ldc;
      T* __restrict c3 = c2 + ldc;
      for (int p = 0; p < k; ++p) {
        const T a0 = a[static_cast<std::size_t>(i) * lda + p], a1 = a[static_cast<std::size_t>(i + 1) * lda + p];
        const T a2 = a[static_cast<std::size_t>(i + 2) * lda + p], a3 = a[static_cast<std::size_t>(i + 3) * lda + p];
        const T* __restrict br = b + static_cast<std::size_t>(p) * ldb + j0;
        for (int j = 0; j < jn; ++j) {
          const T bv = br[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* __restrict c0 = c + static_cast<std::size_t>(i) * ldc + j0;
      for (int p = 0; p < k; ++p) {
        const T a0 = a[static_cast<std::size_t>(i) * lda + p];
        const T* __restrict br = b + static_cast<std::size_t>(p) * ldb + j0;
        for (int j = 0; j < jn; ++j) c0[j] += a0 * br[j];
      }
    }
  }
}

/// Row-major transpose of an r x c matrix.
template <typename T>
std::vector<T> transpose(const T* a, int r, int c) {
  std::vector<T> out(static_cast<std::size_t>(r) * c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = a[static_cast<std::size_t>(i) * c + j];
  return out;
}

/// Patch matrix of x [B,C,H,W] for a (K, stride, pad) convolution with
/// output grid Ho x Wo: row (c*K + kh)*K + kw, column b*Ho*Wo + oh*Wo + ow.
template <typename T>
std::vector<T> im2col(const Tensor<T>& x, int K, int stride, int pad, int Ho, int Wo) {
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo, cols = static_cast<std::size_t>(B) * P;
  std::vector<T> col(static_cast<std::size_t>(C) * K * K * cols, T(0));
  const T* px = x.data();
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < K; ++kh) {
      int oh_lo, oh_hi;
      valid_range(H, Ho, kh, stride, pad, oh_lo, oh_hi);
      for (int kw = 0; kw < K; ++kw) {
        int ow_lo, ow_hi;
        valid_range(W, Wo, kw, stride, pad, ow_lo, ow_hi);
        T* row = col.data() + ((static_cast<std::size_t>(c) * K + kh) * K + kw) * cols;
        for (int b = 0; b < B; ++b) {
          const T* plane = px + (static_cast<std::size_t>(b) * C + c) * H * W;
          T* dst = row + static_cast<std::size_t>(b) * P;
          for (int oh = oh_lo; oh < oh_hi; ++oh) {
            const T* irow = plane + static_cast<std::size_t>(oh * stride - pad + kh) * W;
            T* drow = dst + static_cast<std::size_t>(oh) * Wo;
            for (int ow = ow_lo; ow < ow_hi; ++ow) drow[ow] = irow[ow * stride - pad + kw];
          }
        }
      }
    }
  return col;
}

/// Adjoint of im2col: accumulates the patch matrix back into out [B,C,H,W].
template <typename T>
void col2im(const std::vector<T>& col, Tensor<T>& out, int K, int stride, int pad, int Ho, int Wo) {
  const int B = out.dim(0), C = out.dim(1), H = out.dim(2), W = out.dim(3);
  const std::size_t P = static_cast<std::size_t>(Ho) * Wo, cols = static_cast<std::size_t>(B) * P;
  T* po = out.data();
  for (int c = 0; c < C; ++c)
    for (int kh = 0; kh < K; ++kh) {
      int oh_lo, oh_hi;
      valid_range(H, Ho, kh, stride, pad, oh_lo, oh_hi);
      for (int kw = 0; kw < K; ++kw) {
        int ow_lo, ow_hi;
        valid_range(W, Wo, kw, stride, pad, ow_lo, ow_hi);
        const T* row = col.data() + ((static_cast<std::size_t>(c) * K + kh) * K + kw) * cols;
        for (int b = 0; b < B; ++b) {
          T* plane = po + (static_cast<std::size_t>(b) * C + c) * H * W;
          const T* src = row + static_cast<std::size_t>(b) * P;
          for (int oh = oh_lo; oh < oh_hi; ++oh) {
            T* orow = plane + static_cast<std::size_t>(oh * stride - pad + kh) * W;
            const T* srow = src + static_cast<std::size_t>(oh) * Wo;
            for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow * stride - pad + kw] += srow[ow];
          }
        }
      }
    }
}

/// [B,C,P] -> [C, B*P].
template <typename T>
std::vector<T> channels_major(const Tensor<T>& x) {
  const int B = x.dim(0), C = x.dim(1);
  const std::size_t P = x.size() / (static_cast<std::size_t>(B) * C);
  std::vector<T> out(x.size());
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      std::copy_n(x.data() + (static_cast<std::size_t>(b) * C + c) * P, P,
                  out.data() + (static_cast<std::size_t>(c) * B + b) * P);
  return out;
}

/// [C, B*P] -> out [B,C,...].
template <typename T>
void batch_major(const std::vector<T>& m, Tensor<T>& out) {
  const int B = out.dim(0), C = out.dim(1);
  const std::size_t P = out.size() / (static_cast<std::size_t>(B) * C);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      std::copy_n(m.data() + (static_cast<std::size_t>(c) * B + b) * P, P,
                  out.data() + (static_cast<std::size_t>(b) * C + c) * P);
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(1) != x.dim(1))
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(0), K = w.dim(2);
  const int Ho = conv_out_extent(H, K, stride, pad);
  const int Wo = conv_out_extent(W, K, stride, pad);
  if (Ho <= 0 || Wo <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  const auto col = detail::im2col(x, K, stride, pad, Ho, Wo);
  const int n = B * Ho * Wo, k = C * K * K;
  std::vector<T> res(static_cast<std::size_t>(O) * n, T(0));
  detail::gemm_acc(O, n, k, w.data(), k, col.data(), n, res.data(), n);
  Tensor<T> out({B, O, Ho, Wo});
  detail::batch_major(res, out);
  return out;
}

/// Adjoint of conv2d with respect to its input. `out_h`/`out_w` select among
/// the valid output extents when stride > 1.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad, int out_h,
                           int out_w) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(2) != w.dim(3) || w.dim(0) != x.dim(1))
    throw ShapeError("conv_transpose2d: input " + shape_str(x.shape()) +
                     " incompatible with weight " + shape_str(w.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = w.dim(1), K = w.dim(2);
  const int Ho = out_h, Wo = out_w;
  if (conv_out_extent(Ho, K, stride, pad) != H || conv_out_extent(Wo, K, stride, pad) != W)
    throw ShapeError("conv_transpose2d: output extent " + std::to_string(Ho) + "x" +
                     std::to_string(Wo) + " inconsistent with input " + shape_str(x.shape()));
  const int n = B * H * W, r = O * K * K;
  const auto xm = detail::channels_major(x);
  const auto wt = detail::transpose(w.data(), C, r);
  std::vector<T> col(static_cast<std::size_t>(r) * n, T(0));
  detail::gemm_acc(r, n, C, wt.data(), C, xm.data(), n, col.data(), n);
  Tensor<T> out({B, O, Ho, Wo});
  detail::col2im(col, out, K, stride, pad, H, W);
  return out;
}

/// Gradient of conv2d(x, w) with respect to w, given the output gradient g.
template <typename T>
Tensor<T> conv2d_weight_grad(const Tensor<T>& x, const Tensor<T>& g, int kernel, int stride,
                             int pad) {
  if (x.rank() != 4 || g.rank() != 4 || x.dim(0) != g.dim(0))
    throw ShapeError("conv2d_weight_grad: input " + shape_str(x.shape()) +
                     " incompatible with output gradient " + shape_str(g.shape()));
  const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int O = g.dim(1), Ho = g.dim(2), Wo = g.dim(3), K = kernel;
  if (conv_out_extent(H, K, stride, pad) != Ho || conv_out_extent(W, K, stride, pad) != Wo)
    throw ShapeError("conv2d_weight_grad: output gradient " + shape_str(g.shape()) +
                     " inconsistent with input " + shape_str(x.shape()));
  const int n = B * Ho * Wo, r = C * K * K;
  const auto col = detail::im2col(x, K, stride, pad, Ho, Wo);
  const auto colt = detail::transpose(col.data(), r, n);
  const auto gm = detail::channels_major(g);
  Tensor<T> out({O, C, K, K});
  detail::gemm_acc(O, r, n, gm.data(), n, colt.data(), r, out.data(), r);
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<const Tensor<T>*>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front()->shape();
  const int rank = static_cast<int>(first.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeError("concat rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[d] != first[d])
        throw ShapeError("concat shape mismatch: " + shape_str(first) + " vs " + shape_str(s));
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(shape[d]);
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(shape[d]);
  Tensor<T> out(shape);
  T* po = out.data();
  const std::size_t row = static_cast<std::size_t>(shape[axis]) * inner;
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const std::size_t chunk = static_cast<std::size_t>(p->shape()[axis]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p->data() + o * chunk, chunk, po + o * row + offset);
    offset += chunk;
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int start, int length) {
  const int rank = x.rank();
  if (axis < 0 || axis >= rank || start < 0 || length <= 0 || start + length > x.dim(axis))
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) +
                     ") on axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  Shape shape = x.shape();
  shape[axis] = length;
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(shape[d]);
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(shape[d]);
  Tensor<T> out(shape);
  const std::size_t src_row = static_cast<std::size_t>(x.dim(axis)) * inner;
  const std::size_t chunk = static_cast<std::size_t>(length) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data() + o * src_row + static_cast<std::size_t>(start) * inner, chunk,
                out.data() + o * chunk);
  return out;
}

/// Zero tensor with extent `full` along `axis`, holding `g` at [start, start+len).
template <typename T>
Tensor<T> slice_adjoint(const Tensor<T>& g, int axis, int start, int full) {
  const int rank = g.rank();
  if (axis < 0 || axis >= rank || start < 0 || start + g.dim(axis) > full)
    throw ShapeError("slice_adjoint out of range");
  Shape shape = g.shape();
  shape[axis] = full;
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(shape[d]);
  for (int d = axis + 1; d < rank; ++d) inner *= static_cast<std::size_t>(shape[d]);
  Tensor<T> out(shape);
  const std::size_t dst_row = static_cast<std::size_t>(full) * inner;
  const std::size_t chunk = static_cast<std::size_t>(g.dim(axis)) * inner;
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(g.data() + o * chunk, chunk,
                out.data() + o * dst_row + static_cast<std::size_t>(start) * inner);
  return out;
}

}  // namespace disentangle::kernels
