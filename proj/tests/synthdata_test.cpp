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
#include <filesystem>
#include <random>
#include <vector>

#include "gtest/gtest.h"

#include "disentangle/gmm.hpp"
#include "disentangle/losses.hpp"
#include "disentangle/png.hpp"
#include "disentangle/synthdata.hpp"
#include "support/fixtures.hpp"

namespace disentangle {
namespace {

using synth::TextureFamily;

TEST(Samplers, ColorMeanNearZero) {
  std::mt19937_64 rng(1);
  Color s{};
  for (int i = 0; i < 10000; ++i) {
    const Color c = synth::sample_color(rng);
    for (int k = 0; k < 3; ++k) {
      ASSERT_GE(c[k], -1.0);
      ASSERT_LE(c[k], 1.0);
      s[k] += c[k] / 10000;
    }
  }
  for (double v : s) EXPECT_LT(std::abs(v), 0.05);
}

TEST(Samplers, TextureVarianceNearOne) {
  std::mt19937_64 rng(2);
  double s = 0, s2 = 0;
  for (int i = 0; i < 10000; ++i) {
    const double v = synth::sample_texture(rng, 1)[0];
    s += v;
    s2 += v * v;
  }
  const double mean = s / 10000;
  EXPECT_LT(std::abs(s2 / 10000 - mean * mean - 1.0), 0.1);
}

TEST(Samplers, ReproducibleAndMaskPool) {
  std::mt19937_64 a(3), b(3);
  EXPECT_EQ(synth::sample_color(a), synth::sample_color(b));
  EXPECT_EQ(synth::sample_texture(a, 8), synth::sample_texture(b, 8));
  const std::vector<Mask> pool{testing::box_mask(8, 0, 0, 2, 2), testing::box_mask(8, 2, 2, 6, 6)};
  EXPECT_EQ(synth::sample_mask(std::span<const Mask>(pool), a), synth::sample_mask(std::span<const Mask>(pool), b));
  EXPECT_THROW(synth::sample_mask(std::span<const Mask>(), a), std::invalid_argument);
}

TEST(Article, InvariantsHoldOnManyDraws) {
  std::mt19937_64 rng(4);
  const synth::SynthConfig cfg;
  for (int i = 0; i < 1000; ++i) {
    const auto a = synth::synth_article(rng, cfg);
    const double cov = a.mask.coverage();
    ASSERT_GE(cov, 0.10);
    ASSERT_LE(cov, 0.80);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x)
        if (!a.mask.at(y, x)) {
          for (int c = 0; c < 3; ++c) ASSERT_EQ(a.image.at(y, x, c), 1.0f);
        }
    const Color avg = losses::average_color(a.image, a.mask);
    for (int c = 0; c < 3; ++c) ASSERT_NEAR(avg[c], a.true_avg_color[c], 1e-6);
    ASSERT_GE(synth::mask_iou(synth::article_region(a.image, kWhite, 0.1), a.mask), 0.98) << i;
  }
}

TEST(Article, SolidZeroContrastIsBaseColor) {
  const Mask m = testing::box_mask(16, 2, 2, 10, 12);
  synth::TextureParams p;
  const Color base{-0.3, 0.2, 0.5};
  const Image x = synth::render(m, base, p, kWhite);
  for (int y = 0; y < 16; ++y)
    for (int xx = 0; xx < 16; ++xx)
      if (m.at(y, xx)) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(x.at(y, xx, c), static_cast<float>(base[c]));
      }
  const Color avg = synth::masked_mean(x, m);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(avg[c], base[c], 1e-7);
}

TEST(Article, CheckerOnFullRowsAveragesToBase) {
  const Mask m(32, 32, 1);
  synth::TextureParams p;
  p.family = TextureFamily::kChecker;
  p.frequency = 2;
  p.contrast = 0.4;
  const Color base{0.1, -0.2, 0.3};
  const Image x = synth::render(m, base, p, kWhite);
  Color avg{};
  for (int y = 0; y < 32; ++y)
    for (int xx = 0; xx < 32; ++xx)
      for (int c = 0; c < 3; ++c) avg[c] += x.at(y, xx, c) / 1024.0;
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(avg[c], base[c], 1e-6);
}

TEST(Article, DeterministicPerSeed) {
  std::mt19937_64 a(9), b(9);
  const auto x = synth::synth_article(a), y = synth::synth_article(b);
  EXPECT_EQ(x.image, y.image);
  EXPECT_EQ(x.mask, y.mask);
  const auto d1 = synth::make_dataset(5, 42), d2 = synth::make_dataset(5, 42);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(d1.articles[i].image, d2.articles[i].image);
}

TEST(Article, ImpossibleCoverageFails) {
  std::mt19937_64 rng(5);
  synth::SynthConfig cfg;
  cfg.min_coverage = 0.99;
  EXPECT_THROW(synth::synth_article(rng, cfg), synth::SynthError);
}

TEST(Png, EndpointsAndRoundTrip) {
  EXPECT_EQ(png::to_byte(-1.0f), 0);
  EXPECT_EQ(png::to_byte(1.0f), 255);
  std::mt19937_64 rng(6);
  const Image x = testing::random_image(rng, 7, 9);
  const Image y = png::decode_image(png::encode_image(x));
  ASSERT_EQ(y.height, 7);
  ASSERT_EQ(y.width, 9);
  for (std::size_t i = 0; i < x.data.size(); ++i) EXPECT_LE(std::abs(x.data[i] - y.data[i]), 1.0 / 255);
}

TEST(Png, MaskRoundTripBitExactAndFiles) {
  std::mt19937_64 rng(7);
  Mask m(10, 6);
  std::bernoulli_distribution coin(0.4);
  for (auto& v : m.data) v = coin(rng);
  EXPECT_EQ(png::decode_mask(png::encode_mask(m)), m);
  const auto dir = testing::scratch_dir("png");
  png::write_mask(m, dir / "sub" / "m.png");
  EXPECT_EQ(png::read_mask(dir / "sub" / "m.png"), m);
  write_file_atomic(dir / "bad.png", "not a png");
  EXPECT_THROW(png::read_image(dir / "bad.png"), IoError);
  EXPECT_THROW(png::read_image(dir / "missing.png"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Gmm, SingleClusterRecoversSampleMean) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0, 0.05);
  std::vector<Color> xs;
  Color mean{};
  for (int i = 0; i < 500; ++i) {
    Color c{0.3 + n(rng), -0.2 + n(rng), 0.6 + n(rng)};
    for (int k = 0; k < 3; ++k) mean[k] += c[k] / 500;
    xs.push_back(c);
  }
  GmmOptions opt;
  opt.components = 1;
  const auto g = fit_color_gmm(std::span<const Color>(xs), rng, opt);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(g.means[0][k], mean[k], 1e-3);
  EXPECT_GT(gmm_loglik(g, mean), gmm_loglik(g, {-1, 1, -1}));
}

TEST(Gmm, SixteenComponentsMonotoneAndValid) {
  std::mt19937_64 rng(9);
  const auto d = synth::make_dataset(400, 3);
  const auto colors = d.colors();
  const auto g = fit_color_gmm(std::span<const Color>(colors), rng);
  ASSERT_EQ(g.components(), 16);
  double w = 0;
  for (int k = 0; k < 16; ++k) {
    w += g.weights[k];
    for (double v : g.variances[k]) EXPECT_GE(v, 1e-6);
  }
  EXPECT_NEAR(w, 1.0, 1e-9);
  for (std::size_t i = 1; i < g.trace.size(); ++i) EXPECT_GE(g.trace[i], g.trace[i - 1] - 1e-9);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 100; ++i) EXPECT_TRUE(std::isfinite(gmm_loglik(g, {u(rng), u(rng), u(rng)})));
  EXPECT_THROW(fit_color_gmm(std::span<const Color>(colors.data(), 100), rng), std::invalid_argument);
}

TEST(MaskIou, Examples) {
  const Mask a = testing::box_mask(4, 0, 0, 2, 2);
  EXPECT_DOUBLE_EQ(synth::mask_iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(synth::mask_iou(a, testing::box_mask(4, 2, 2, 4, 4)), 0.0);
  Mask p(1, 3), q(1, 3);
  p.data = {1, 1, 0};
  q.data = {0, 1, 1};
  EXPECT_DOUBLE_EQ(synth::mask_iou(p, q), 1.0 / 3);
  EXPECT_THROW(synth::mask_iou(Mask(2, 2), Mask(2, 2)), std::invalid_argument);
}

TEST(Dataset, WriteThenLoad) {
  const auto dir = testing::scratch_dir("dataset");
  const auto d = synth::make_dataset(6, 11, synth::SynthConfig{.image_size = 16});
  synth::write_dataset(d, dir);
  const auto e = synth::load_dataset(dir);
  ASSERT_EQ(e.articles.size(), 6u);
  EXPECT_EQ(e.config.image_size, 16);
  EXPECT_EQ(e.seed, 11u);
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(e.articles[i].mask, d.articles[i].mask);
    EXPECT_EQ(e.articles[i].texture, d.articles[i].texture);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(e.articles[i].true_avg_color[c], d.articles[i].true_avg_color[c], 1.0 / 255);
  }
  std::filesystem::remove(dir / "manifest.json");
  EXPECT_EQ(synth::load_dataset(dir).articles.size(), 6u);
  std::filesystem::remove_all(dir);
}

TEST(Oracle, RendererHitsRequestedColorExactly) {
  std::mt19937_64 rng(12);
  const auto pool = synth::make_dataset(20, 1).masks();
  for (int i = 0; i < 50; ++i) {
    const Color c = synth::sample_color(rng);
    const auto t = synth::sample_texture(rng, 8);
    const Mask& m = synth::sample_mask(std::span<const Mask>(pool), rng);
    const Image x = synth::render_from_attributes(c, t, m);
    const Color a = synth::masked_mean(x, m);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[k], c[k], 1e-6);
  }
}

}  // namespace
}  // namespace disentangle
