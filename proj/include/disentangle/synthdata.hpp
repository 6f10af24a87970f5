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

// Procedural garment articles: a dress-like silhouette filled with a base
// color under a symmetric texture modulation, on a plain background.
// Also attribute samplers, mask utilities and the on-disk dataset layout.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "disentangle/image.hpp"
#include "disentangle/io.hpp"
#include "disentangle/png.hpp"
#include "json.hpp"

namespace disentangle::synth {

enum class TextureFamily { kSolid, kHStripes, kVStripes, kChecker, kNoise };

inline constexpr std::array<TextureFamily, 5> kFamilies{TextureFamily::kSolid, TextureFamily::kHStripes,
                                                        TextureFamily::kVStripes, TextureFamily::kChecker,
                                                        TextureFamily::kNoise};

NLOHMANN_JSON_SERIALIZE_ENUM(TextureFamily, {{TextureFamily::kSolid, "solid"},
                                             {TextureFamily::kHStripes, "h-stripes"},
                                             {TextureFamily::kVStripes, "v-stripes"},
                                             {TextureFamily::kChecker, "checker"},
                                             {TextureFamily::kNoise, "noise"}})

struct TextureParams {
  TextureFamily family = TextureFamily::kSolid;
  int frequency = 1;       // periods across the canvas, 1..8
  double phase = 0.0;      // fraction of a period, [0, 1)
  double contrast = 0.0;   // modulation amplitude, [0, 0.5]
  std::uint64_t noise_seed = 0;

  friend bool operator==(const TextureParams&, const TextureParams&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TextureParams, family, frequency, phase, contrast, noise_seed)

struct SynthConfig {
  int image_size = 32;
  Color background = kWhite;
  double min_coverage = 0.10;
  double max_coverage = 0.80;
  double max_contrast = 0.5;
  /// Darkest base channel plus contrast stays at or below this value, which
  /// keeps every article pixel visibly off a white background.
  double max_base_plus_contrast = 0.8;
  int max_attempts = 100;
};

struct SynthArticle {
  Image image;
  Mask mask;
  Color true_avg_color{};
  Color base_color{};
  TextureParams texture;
};

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Attribute samplers.

template <typename Rng>
Color sample_color(Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Color c;
  for (auto& v : c) v = u(rng);
  return c;
}

template <typename Rng>
std::vector<double> sample_texture(Rng& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> t(static_cast<std::size_t>(dim));
  for (auto& v : t) v = n(rng);
  return t;
}

template <typename Rng>
const Mask& sample_mask(std::span<const Mask> pool, Rng& rng) {
  if (pool.empty()) throw std::invalid_argument("sample_mask: empty mask pool");
  return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

// ---------------------------------------------------------------------------
// Mask utilities.

inline void check_same_size(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw std::invalid_argument("mask sizes differ");
}

inline double mask_iou(const Mask& a, const Mask& b) {
  check_same_size(a, b);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    inter += a.data[i] && b.data[i];
    uni += a.data[i] || b.data[i];
  }
  if (uni == 0) throw std::invalid_argument("mask_iou: empty union");
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

/// 3x3 erosion or dilation over in-bounds neighbours.
inline Mask morph(const Mask& m, bool erode) {
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool hit = erode;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= m.height || xx < 0 || xx >= m.width) continue;
          if (erode && !m.at(yy, xx)) hit = false;
          if (!erode && m.at(yy, xx)) hit = true;
        }
      out.at(y, x) = hit ? 1 : 0;
    }
  return out;
}

}  // namespace detail

inline Mask erode(const Mask& m) { return detail::morph(m, true); }
inline Mask dilate(const Mask& m) { return detail::morph(m, false); }
inline Mask open_mask(const Mask& m) { return dilate(erode(m)); }

/// Pixels whose largest channel distance from the background exceeds `threshold`.
inline Mask threshold_mask(const Image& x, const Color& background, double threshold) {
  Mask m(x.height, x.width);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx) {
      double d = 0;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(static_cast<double>(x.at(y, xx, c)) - background[c]));
      m.at(y, xx) = d > threshold ? 1 : 0;
    }
  return m;
}

/// Threshold followed by one morphological opening.
inline Mask article_region(const Image& x, const Color& background, double threshold) {
  return open_mask(threshold_mask(x, background, threshold));
}

// ---------------------------------------------------------------------------
// Rendering.

namespace detail {

inline double square_wave(double u) { return u - std::floor(u) < 0.5 ? 1.0 : -1.0; }

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Zero-mean-ish modulation pattern in {-1, +1} (noise: [-1, 1]).
inline double pattern_value(const TextureParams& p, int y, int x, int size) {
  const double f = p.frequency;
  const double uy = (y + 0.5) / size * f + p.phase;
  const double ux = (x + 0.5) / size * f + p.phase;
  switch (p.family) {
    case TextureFamily::kSolid:
      return 0.0;
    case TextureFamily::kHStripes:
      return detail::square_wave(uy);
    case TextureFamily::kVStripes:
      return detail::square_wave(ux);
    case TextureFamily::kChecker:
      return detail::square_wave(uy) * detail::square_wave(ux);
    case TextureFamily::kNoise: {
      const int cell = std::max(1, size / (2 * p.frequency));
      const std::uint64_t key = p.noise_seed ^ (static_cast<std::uint64_t>(y / cell) << 32) ^
                                static_cast<std::uint64_t>(x / cell);
      return static_cast<double>(detail::splitmix64(key) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    }
  }
  return 0.0;
}

/// Article pixels base + contrast * pattern (optionally clamped), background elsewhere.
inline Image render(const Mask& mask, const Color& base, const TextureParams& tex, const Color& background,
                    bool clamp = true) {
  const int size = mask.width;
  Image x(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int xx = 0; xx < mask.width; ++xx) {
      const double p = mask.at(y, xx) ? pattern_value(tex, y, xx, size) : 0.0;
      for (int c = 0; c < 3; ++c) {
        double v = mask.at(y, xx) ? base[c] + tex.contrast * p : background[c];
        if (clamp) v = std::clamp(v, -1.0, 1.0);
        x.at(y, xx, c) = static_cast<float>(v);
      }
    }
  return x;
}

/// Per-channel mean over the mask, accumulated in double.
inline Color masked_mean(const Image& x, const Mask& m) {
  Color s{};
  std::size_t n = 0;
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx)
      if (m.at(y, xx)) {
        ++n;
        for (int c = 0; c < 3; ++c) s[c] += x.at(y, xx, c);
      }
  if (n == 0) throw std::invalid_argument("masked_mean: empty mask");
  for (auto& v : s) v /= static_cast<double>(n);
  return s;
}

namespace detail {

struct Part {
  bool ellipse;
  double y0, y1;          // vertical extent, in pixels
  double top, bottom;     // half-widths at y0 and y1 (ellipse: top = half-width)
};

inline bool inside(const Part& p, double cx, double y, double x) {
  if (y < p.y0 || y > p.y1) return false;
  if (p.ellipse) {
    const double cy = 0.5 * (p.y0 + p.y1), ry = 0.5 * (p.y1 - p.y0);
    const double dy = (y - cy) / ry, dx = (x - cx) / p.top;
    return dx * dx + dy * dy <= 1.0;
  }
  const double t = (y - p.y0) / std::max(p.y1 - p.y0, 1e-9);
  return std::abs(x - cx) <= p.top + t * (p.bottom - p.top);
}

}  // namespace detail

/// One dress-like silhouette attempt: a bodice and a skirt plus up to two
/// extra horizontally centered parts, smoothed by one opening.
template <typename Rng>
Mask silhouette(Rng& rng, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto r = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const double s = size;
  const double cx = s / 2.0 + r(-s / 16.0, s / 16.0);
  std::vector<detail::Part> parts;
  const double top = r(0.05, 0.22) * s, waist = r(0.35, 0.55) * s, hem = r(0.70, 0.97) * s;
  const double waist_w = r(0.08, 0.16) * s;
  parts.push_back({u(rng) < 0.3, top, waist, r(0.10, 0.22) * s, waist_w});
  parts.push_back({false, waist, hem, waist_w, r(0.18, 0.46) * s});
  const int extra = std::uniform_int_distribution<int>(0, 2)(rng);
  for (int i = 0; i < extra; ++i) {
    const double y0 = r(top, hem - 0.15 * s);
    parts.push_back({true, y0, y0 + r(0.10, 0.30) * s, r(0.08, 0.30) * s, 0.0});
  }
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (const auto& p : parts)
        if (detail::inside(p, cx, y + 0.5, x + 0.5)) {
          m.at(y, x) = 1;
          break;
        }
  return open_mask(m);
}

/// Broad clusters of garment colors on the [-1, 1] scale.
inline constexpr std::array<Color, 12> kPalette{{{-0.85, -0.85, -0.85},
                                                  {0.55, -0.75, -0.70},
                                                  {-0.80, -0.45, 0.45},
                                                  {-0.70, 0.25, -0.55},
                                                  {0.55, 0.35, -0.80},
                                                  {0.15, -0.60, 0.25},
                                                  {-0.20, -0.20, -0.20},
                                                  {0.45, -0.05, -0.35},
                                                  {-0.55, 0.10, 0.35},
                                                  {0.35, 0.30, 0.25},
                                                  {-0.40, -0.65, -0.10},
                                                  {0.10, 0.45, 0.55}}};

template <typename Rng>
TextureParams sample_texture_params(Rng& rng, const SynthConfig& cfg) {
  TextureParams p;
  p.family = kFamilies[std::uniform_int_distribution<std::size_t>(0, kFamilies.size() - 1)(rng)];
  p.frequency = std::uniform_int_distribution<int>(1, 8)(rng);
  p.phase = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  p.contrast = p.family == TextureFamily::kSolid ? 0.0
                                                 : std::uniform_real_distribution<double>(0.1, cfg.max_contrast)(rng);
  p.noise_seed = rng();
  return p;
}

template <typename Rng>
Color sample_base_color(Rng& rng, double contrast, const SynthConfig& cfg) {
  const Color& center = kPalette[std::uniform_int_distribution<std::size_t>(0, kPalette.size() - 1)(rng)];
  std::normal_distribution<double> n(0.0, 0.2);
  Color c{};
  for (int attempt = 0; attempt < 64; ++attempt) {
    for (int k = 0; k < 3; ++k) c[k] = std::clamp(center[k] + n(rng), -1.0, 1.0);
    if (*std::min_element(c.begin(), c.end()) + contrast <= cfg.max_base_plus_contrast) return c;
  }
  for (auto& v : c) v = std::min(v, cfg.max_base_plus_contrast - contrast);
  return c;
}

template <typename Rng>
SynthArticle synth_article(Rng& rng, const SynthConfig& cfg = {}) {
  for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    Mask m = silhouette(rng, cfg.image_size);
    const double cov = m.coverage();
    if (cov < cfg.min_coverage || cov > cfg.max_coverage) continue;
    SynthArticle a;
    a.texture = sample_texture_params(rng, cfg);
    a.base_color = sample_base_color(rng, a.texture.contrast, cfg);
    a.image = render(m, a.base_color, a.texture, cfg.background);
    a.mask = std::move(m);
    a.true_avg_color = masked_mean(a.image, a.mask);
    return a;
  }
  throw SynthError("synth_article: no silhouette within coverage bounds after " +
                   std::to_string(cfg.max_attempts) + " attempts");
}

// ---------------------------------------------------------------------------
// Ground-truth renderer keyed by generator attributes, used to validate the
// evaluation metrics without a trained network.

inline double normal_cdf(double v) { return 0.5 * std::erfc(-v / std::sqrt(2.0)); }

/// Deterministic texture parameters for a latent vector (needs >= 4 components).
inline TextureParams texture_from_latent(std::span<const double> t, double max_contrast = 0.5) {
  if (t.size() < 4) throw std::invalid_argument("texture_from_latent: latent needs at least 4 components");
  TextureParams p;
  const auto q = [](double v, int k) { return std::min(k - 1, static_cast<int>(normal_cdf(v) * k)); };
  p.family = kFamilies[static_cast<std::size_t>(q(t[0], 5))];
  p.frequency = 1 + q(t[1], 8);
  p.phase = normal_cdf(t[2]);
  p.contrast = p.family == TextureFamily::kSolid ? 0.0 : 0.1 + (max_contrast - 0.1) * normal_cdf(t[3]);
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (double v : t) h = detail::splitmix64(h ^ std::hash<double>{}(v));
  p.noise_seed = h;
  return p;
}

/// Renders (c, t, m) so that the masked average color equals c exactly
/// (in-mask pixels are shifted, never clamped).
inline Image render_from_attributes(const Color& color, std::span<const double> texture, const Mask& mask,
                                    const Color& background = kWhite) {
  const TextureParams p = texture_from_latent(texture);
  Image x = render(mask, color, p, background, false);
  const Color avg = masked_mean(x, mask);
  for (int y = 0; y < x.height; ++y)
    for (int xx = 0; xx < x.width; ++xx)
      if (mask.at(y, xx))
        for (int c = 0; c < 3; ++c)
          x.at(y, xx, c) = static_cast<float>(x.at(y, xx, c) + (color[c] - avg[c]));
  return x;
}

// ---------------------------------------------------------------------------
// Dataset.

struct Dataset {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<SynthArticle> articles;

  std::vector<Mask> masks() const {
    std::vector<Mask> out;
    out.reserve(articles.size());
    for (const auto& a : articles) out.push_back(a.mask);
    return out;
  }
  std::vector<Color> colors() const {
    std::vector<Color> out;
    out.reserve(articles.size());
    for (const auto& a : articles) out.push_back(a.true_avg_color);
    return out;
  }
};

/// Article i uses its own generator seeded from (seed, i).
inline Dataset make_dataset(int n, std::uint64_t seed, const SynthConfig& cfg = {}) {
  if (n < 1) throw std::invalid_argument("make_dataset: n must be positive");
  Dataset d;
  d.config = cfg;
  d.seed = seed;
  d.articles.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(static_cast<std::uint64_t>(i))));
    d.articles.push_back(synth_article(rng, cfg));
  }
  return d;
}

inline void write_dataset(const Dataset& d, const std::filesystem::path& dir) {
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t i = 0; i < d.articles.size(); ++i) {
    const auto& a = d.articles[i];
    char stem[32];
    std::snprintf(stem, sizeof stem, "%06zu", i);
    const std::string image = std::string("images/") + stem + ".png";
    const std::string mask = std::string("masks/") + stem + ".png";
    png::write_image(a.image, dir / image);
    png::write_mask(a.mask, dir / mask);
    entries.push_back({{"image", image},
                       {"mask", mask},
                       {"true_avg_color", a.true_avg_color},
                       {"base_color", a.base_color},
                       {"texture", a.texture}});
  }
  const nlohmann::json manifest = {{"version", 1},
                                   {"seed", d.seed},
                                   {"image_size", d.config.image_size},
                                   {"background", d.config.background},
                                   {"articles", entries}};
  write_file_atomic(dir / "manifest.json", manifest.dump(1));
}

/// Reads a dataset directory. With a manifest.json the listed pairs are
/// used; otherwise every images/NAME.png with a matching masks/NAME.png.
/// Average colors are recomputed from the pixels in both cases.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;
  std::vector<nlohmann::json> meta;
  const auto manifest_path = dir / "manifest.json";
  if (std::filesystem::exists(manifest_path)) {
    nlohmann::json m;
    try {
      m = nlohmann::json::parse(read_file(manifest_path));
      d.seed = m.value("seed", std::uint64_t{0});
      d.config.background = m.value("background", kWhite);
      for (const auto& e : m.at("articles")) {
        pairs.emplace_back(dir / e.at("image").get<std::string>(), dir / e.at("mask").get<std::string>());
        meta.push_back(e);
      }
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed dataset manifest " + manifest_path.string() + ": " + e.what());
    }
  } else {
    if (!std::filesystem::is_directory(dir / "images"))
      throw IoError("dataset " + dir.string() + " has neither manifest.json nor images/");
    std::vector<std::filesystem::path> images;
    for (const auto& entry : std::filesystem::directory_iterator(dir / "images"))
      if (entry.path().extension() == ".png") images.push_back(entry.path());
    std::sort(images.begin(), images.end());
    for (const auto& p : images) {
      const auto mask = dir / "masks" / p.filename();
      if (std::filesystem::exists(mask)) pairs.emplace_back(p, mask);
    }
  }
  if (pairs.empty()) throw IoError("dataset " + dir.string() + " is empty");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    SynthArticle a;
    a.image = png::read_image(pairs[i].first);
    a.mask = png::read_mask(pairs[i].second);
    if (a.image.height != a.mask.height || a.image.width != a.mask.width || a.image.height != a.image.width)
      throw IoError("dataset pair " + pairs[i].first.string() + " has mismatched or non-square sizes");
    if (a.mask.count() == 0) throw IoError("dataset mask " + pairs[i].second.string() + " is empty");
    if (i > 0 && a.image.height != d.articles.front().image.height)
      throw IoError("dataset " + dir.string() + " mixes image sizes");
    a.true_avg_color = masked_mean(a.image, a.mask);
    if (i < meta.size()) {
      a.base_color = meta[i].value("base_color", a.true_avg_color);
      if (meta[i].contains("texture")) a.texture = meta[i].at("texture").get<TextureParams>();
    }
    d.articles.push_back(std::move(a));
  }
  d.config.image_size = d.articles.front().image.height;
  return d;
}

}  // namespace disentangle::synth
