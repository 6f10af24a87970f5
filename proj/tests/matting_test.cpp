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

#include <cmath>
#include <random>

#include "gtest/gtest.h"

#include "disentangle/matting.hpp"
#include "support/fixtures.hpp"
#include "support/matting_suite.hpp"

namespace disentangle {
namespace {

using matting::FlatImage;
using testing::random_image;

TEST(Flatten, ScanlineOrderAndRoundTrip) {
  Image one(1, 1);
  one.at(0, 0, 0) = 0.5f;
  one.at(0, 0, 1) = 0.0f;
  one.at(0, 0, 2) = -0.5f;
  const auto f = matting::flatten_image(one);
  ASSERT_EQ(f.rows, 1);
  EXPECT_EQ(f.at(0, 0), 0.5);
  EXPECT_EQ(f.at(0, 2), -0.5);

  Image col(2, 1);
  col.at(1, 0, 1) = 0.25f;
  EXPECT_EQ(matting::flatten_image(col).at(1, 1), 0.25);

  std::mt19937_64 rng(1);
  const Image x = random_image(rng, 8, 8);
  EXPECT_EQ(matting::unflatten_image(matting::flatten_image(x), 8, 8), x);
  EXPECT_THROW(matting::unflatten_image(matting::flatten_image(x), 4, 8), std::invalid_argument);
}

TEST(Laplacian, ConstantImageIsInNullSpace) {
  const Image x(7, 9, 0.3f);
  const auto L = matting::matting_laplacian(x);
  EXPECT_NEAR(matting::quadratic_form(L, matting::flatten_image(x)), 0.0, 1e-12);
}

TEST(Laplacian, RowsSumToZeroOnRandom8x8) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 10; ++k) {
    const auto L = matting::matting_laplacian(random_image(rng, 8, 8));
    std::vector<double> ones(64, 1.0), out(64);
    L.multiply(ones, out);
    for (double v : out) EXPECT_LT(std::abs(v), 1e-8);
  }
}

TEST(Laplacian, MatchesDenseOracleOn5x5) {
  std::mt19937_64 rng(3);
  const Image x = random_image(rng, 5, 5);
  const auto L = matting::matting_laplacian(x);
  const auto D = testing::dense_matting_oracle(x, 1, matting::kDefaultEpsilon);
  for (int i = 0; i < 25; ++i)
    for (int j = 0; j < 25; ++j) EXPECT_NEAR(L.at(i, j), D.at(i, j), 1e-8) << i << "," << j;
}

TEST(Laplacian, LargerRadiusMatchesDenseOracle) {
  std::mt19937_64 rng(4);
  const Image x = random_image(rng, 7, 6);
  const auto L = matting::matting_laplacian(x, 2, 1e-3);
  const auto D = testing::dense_matting_oracle(x, 2, 1e-3);
  for (int i = 0; i < D.n; ++i)
    for (int j = 0; j < D.n; ++j) EXPECT_NEAR(L.at(i, j), D.at(i, j), 1e-8);
}

TEST(Laplacian, RejectsBadArguments) {
  EXPECT_THROW(matting::matting_laplacian(Image(2, 8)), std::invalid_argument);
  EXPECT_THROW(matting::matting_laplacian(Image(8, 8), 0), std::invalid_argument);
  EXPECT_THROW(matting::matting_laplacian(Image(8, 8), 1, 0.0), std::invalid_argument);
  EXPECT_THROW(matting::matting_laplacian(Image(4, 4), 2), std::invalid_argument);
}

TEST(Laplacian, RandomizedSuite) {
  const auto r = testing::run_matting_suite(17);
  EXPECT_GE(r.images, 50);
  EXPECT_TRUE(r.symmetric);
  EXPECT_TRUE(r.sparsity_ok);
  EXPECT_LT(r.max_row_sum, 1e-8);
  EXPECT_GE(r.worst_psd, -1e-8);
  EXPECT_LT(r.max_offset_change, 1e-8);
  EXPECT_LT(r.max_dense_error, 1e-8);
  EXPECT_LT(r.seconds, 60.0);
}

TEST(QuadraticForm, MatchesDenseMultiplyOn4x4) {
  std::mt19937_64 rng(5);
  const Image x = random_image(rng, 4, 4);
  const auto L = matting::matting_laplacian(x);
  const auto D = testing::dense_matting_oracle(x, 1, matting::kDefaultEpsilon);
  const Image y = random_image(rng, 4, 4);
  const auto v = matting::flatten_image(y);
  double expect = 0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i)
      for (int j = 0; j < 16; ++j) expect += v.at(i, c) * D.at(i, j) * v.at(j, c);
  EXPECT_NEAR(matting::quadratic_form(L, v), expect, 1e-9);
  EXPECT_THROW(matting::quadratic_form(L, matting::flatten_image(Image(3, 3))), std::invalid_argument);
}

TEST(QuadraticForm, GradientMatchesFiniteDifferencesAndIsLinear) {
  std::mt19937_64 rng(6);
  const auto L = matting::matting_laplacian(random_image(rng, 6, 5));
  auto v = matting::flatten_image(random_image(rng, 6, 5));
  const auto g = matting::quadratic_form_grad(L, v);
  const double h = 1e-6;
  double num = 0, den = 0;
  for (std::size_t k = 0; k < v.data.size(); ++k) {
    const double keep = v.data[k];
    v.data[k] = keep + h;
    const double up = matting::quadratic_form(L, v);
    v.data[k] = keep - h;
    const double down = matting::quadratic_form(L, v);
    v.data[k] = keep;
    const double fd = (up - down) / (2 * h);
    num += (fd - g.data[k]) * (fd - g.data[k]);
    den += fd * fd;
  }
  EXPECT_LT(std::sqrt(num / den), 1e-4);

  auto scaled = v;
  for (auto& e : scaled.data) e *= -2.5;
  const auto gs = matting::quadratic_form_grad(L, scaled);
  for (std::size_t k = 0; k < g.data.size(); ++k) EXPECT_NEAR(gs.data[k], -2.5 * g.data[k], 1e-12);

  FlatImage<double> constant{v.rows, std::vector<double>(v.data.size())};
  for (int i = 0; i < v.rows; ++i)
    for (int c = 0; c < 3; ++c) constant.at(i, c) = 0.1 * (c + 1);
  for (double e : matting::quadratic_form_grad(L, constant).data) EXPECT_NEAR(e, 0.0, 1e-12);
}

}  // namespace
}  // namespace disentangle
