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

// Diagonal-covariance Gaussian mixture over 3-d colors, fitted by EM.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "disentangle/image.hpp"
#include "json.hpp"

namespace disentangle {

struct ColorGmm {
  std::vector<double> weights;
  std::vector<Color> means;
  std::vector<Color> variances;
  /// Mean log-likelihood after seeding and after every EM iteration.
  std::vector<double> trace;

  int components() const { return static_cast<int>(weights.size()); }
};

inline void to_json(nlohmann::json& j, const ColorGmm& g) {
  j = {{"weights", g.weights}, {"means", g.means}, {"variances", g.variances}};
}

inline void from_json(const nlohmann::json& j, ColorGmm& g) {
  j.at("weights").get_to(g.weights);
  j.at("means").get_to(g.means);
  j.at("variances").get_to(g.variances);
}

struct GmmOptions {
  int components = 16;
  int max_iterations = 200;
  double tolerance = 1e-6;
  double variance_floor = 1e-6;
};

namespace detail {

inline double log_gauss_diag(const Color& x, const Color& mean, const Color& var) {
  double s = 0;
  for (int c = 0; c < 3; ++c) {
    const double d = x[c] - mean[c];
    s += d * d / var[c] + std::log(2.0 * std::numbers::pi * var[c]);
  }
  return -0.5 * s;
}

inline double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

inline double sq_dist(const Color& a, const Color& b) {
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (a[c] - b[c]) * (a[c] - b[c]);
  return s;
}

}  // namespace detail

inline double gmm_loglik(const ColorGmm& g, const Color& x) {
  std::vector<double> terms(g.weights.size());
  for (std::size_t k = 0; k < terms.size(); ++k)
    terms[k] = std::log(g.weights[k]) + detail::log_gauss_diag(x, g.means[k], g.variances[k]);
  return detail::log_sum_exp(terms);
}

inline double gmm_mean_loglik(const ColorGmm& g, std::span<const Color> xs) {
  double s = 0;
  for (const auto& x : xs) s += gmm_loglik(g, x);
  return s / static_cast<double>(xs.size());
}

/// k-means++ seeding, then EM until the mean log-likelihood gain drops
/// below the tolerance or the iteration cap is reached.
template <typename Rng>
ColorGmm fit_color_gmm(std::span<const Color> xs, Rng& rng, const GmmOptions& opt = {}) {
  const int k = opt.components;
  if (k < 1) throw std::invalid_argument("fit_color_gmm: need at least one component");
  if (xs.size() < static_cast<std::size_t>(10 * k))
    throw std::invalid_argument("fit_color_gmm: need at least " + std::to_string(10 * k) + " points, got " +
                                std::to_string(xs.size()));
  const std::size_t n = xs.size();

  // Seeding.
  std::vector<Color> centers;
  centers.push_back(xs[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::sq_dist(xs[i], centers.back()));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < n; ++pick) {
        r -= d2[pick];
        if (r <= 0) break;
      }
    } else {
      pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    }
    centers.push_back(xs[pick]);
  }

  Color global_mean{}, global_var{};
  for (const auto& x : xs)
    for (int c = 0; c < 3; ++c) global_mean[c] += x[c] / static_cast<double>(n);
  for (const auto& x : xs)
    for (int c = 0; c < 3; ++c) global_var[c] += (x[c] - global_mean[c]) * (x[c] - global_mean[c]) / static_cast<double>(n);

  ColorGmm g;
  g.weights.assign(static_cast<std::size_t>(k), 1.0 / k);
  g.means = centers;
  for (int c = 0; c < 3; ++c) global_var[c] = std::max(global_var[c], opt.variance_floor);
  g.variances.assign(static_cast<std::size_t>(k), global_var);
  g.trace.push_back(gmm_mean_loglik(g, xs));

  std::vector<double> resp(n * static_cast<std::size_t>(k));
  std::vector<double> row(static_cast<std::size_t>(k));
  for (int it = 0; it < opt.max_iterations; ++it) {
    // E step.
    for (std::size_t i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j)
        row[j] = std::log(g.weights[j]) + detail::log_gauss_diag(xs[i], g.means[j], g.variances[j]);
      const double lse = detail::log_sum_exp(row);
      for (int j = 0; j < k; ++j) resp[i * k + j] = std::exp(row[j] - lse);
    }
    // M step.
    for (int j = 0; j < k; ++j) {
      double nk = 0;
      Color mean{}, var{};
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * k + j];
        nk += r;
        for (int c = 0; c < 3; ++c) mean[c] += r * xs[i][c];
      }
      if (nk < 1e-12) {
        // Collapsed component: park it on the global statistics with a tiny weight.
        g.weights[j] = 1e-12;
        g.means[j] = global_mean;
        g.variances[j] = global_var;
        continue;
      }
      for (int c = 0; c < 3; ++c) mean[c] /= nk;
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp[i * k + j];
        for (int c = 0; c < 3; ++c) var[c] += r * (xs[i][c] - mean[c]) * (xs[i][c] - mean[c]);
      }
      for (int c = 0; c < 3; ++c) var[c] = std::max(var[c] / nk, opt.variance_floor);
      g.weights[j] = nk / static_cast<double>(n);
      g.means[j] = mean;
      g.variances[j] = var;
    }
    double wsum = 0;
    for (double w : g.weights) wsum += w;
    for (double& w : g.weights) w /= wsum;
    g.trace.push_back(gmm_mean_loglik(g, xs));
    const double gain = g.trace.back() - g.trace[g.trace.size() - 2];
    if (std::abs(gain) < opt.tolerance) break;
  }
  return g;
}

}  // namespace disentangle
