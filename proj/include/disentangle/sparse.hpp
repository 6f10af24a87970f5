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

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace disentangle {

/// Square sparse matrix in compressed sparse-row layout. Both triangles are
/// stored; builders are responsible for writing (i,j) and (j,i) identically.
template <typename T>
struct SparseSymmetricMatrix {
  int n = 0;
  std::vector<std::size_t> row_offsets;  // n + 1 entries
  std::vector<int> columns;              // sorted ascending within each row
  std::vector<T> values;

  std::size_t nonzeros() const { return values.size(); }

  std::size_t row_length(int row) const { return row_offsets[row + 1] - row_offsets[row]; }

  /// Entry (i,j), zero if not stored.
  T at(int i, int j) const {
    for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k)
      if (columns[k] == j) return values[k];
    return T(0);
  }

  /// out = L * v, for a single column vector of length n.
  void multiply(std::span<const T> v, std::span<T> out) const {
    if (static_cast<int>(v.size()) != n || static_cast<int>(out.size()) != n)
      throw std::invalid_argument("sparse multiply: dimension " + std::to_string(v.size()) +
                                  " does not match matrix size " + std::to_string(n));
    for (int i = 0; i < n; ++i) {
      T acc = 0;
      for (std::size_t k = row_offsets[i]; k < row_offsets[i + 1]; ++k)
        acc += values[k] * v[static_cast<std::size_t>(columns[k])];
      out[static_cast<std::size_t>(i)] = acc;
    }
  }

  template <typename U>
  SparseSymmetricMatrix<U> cast() const {
    SparseSymmetricMatrix<U> out;
    out.n = n;
    out.row_offsets = row_offsets;
    out.columns = columns;
    out.values.assign(values.begin(), values.end());
    return out;
  }
};

}  // namespace disentangle
