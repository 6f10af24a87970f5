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

// Training objectives. Each term has a graph form, used by the trainer and
// the inverter, and a value form over images that evaluates the same graph
// code in double precision.
//
// Batch layout: images [B,3,H,W], masks [B,1,H,W] of 0/1, colors [B,3].

#pragma once

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "disentangle/gan.hpp"
#include "disentangle/graph.hpp"
#include "disentangle/image.hpp"
#include "disentangle/matting.hpp"
#include "json.hpp"

namespace disentangle::losses {

struct LossWeights {
  double lambda_c = 100.0;
  double lambda_t = 100.0;
  double lambda_s = 1.0;
  double lambda_g = 100.0;
  double lambda_gp = 10.0;
  Color background = kWhite;

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

inline void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda_c", w.lambda_c}, {"lambda_t", w.lambda_t},   {"lambda_s", w.lambda_s},
       {"lambda_g", w.lambda_g}, {"lambda_gp", w.lambda_gp}, {"background", w.background}};
}

inline void from_json(const nlohmann::json& j, LossWeights& w) {
  const LossWeights d;
  w.lambda_c = j.value("lambda_c", d.lambda_c);
  w.lambda_t = j.value("lambda_t", d.lambda_t);
  w.lambda_s = j.value("lambda_s", d.lambda_s);
  w.lambda_g = j.value("lambda_g", d.lambda_g);
  w.lambda_gp = j.value("lambda_gp", d.lambda_gp);
  w.background = j.value("background", d.background);
}

/// Normalization of the texture term inside an objective: the raw trace, or
/// the trace divided by the pixel count.
enum class TextureScale { kNone, kPerPixel };

NLOHMANN_JSON_SERIALIZE_ENUM(TextureScale, {{TextureScale::kNone, "none"}, {TextureScale::kPerPixel, "per_pixel"}})

inline double texture_scale_factor(TextureScale s, int height, int width) {
  return s == TextureScale::kPerPixel ? 1.0 / (static_cast<double>(height) * width) : 1.0;
}

using Pair = std::pair<int, int>;

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A(x, m): masked per-channel mean, [B,3].
template <typename T>
Var average_color(Graph<T>& g, Var images, Var masks) {
  const Shape& s = g.shape(images);
  const int batch = s.at(0);
  Var counts = g.sum_to(masks, {batch, 1, 1, 1});
  for (T c : g.value(counts).values())
    if (!(c > T(0))) throw LossError("average_color: empty mask");
  Var sums = g.sum_to(g.mul(images, masks), {batch, 3, 1, 1});
  return g.reshape(g.div(sums, counts), {batch, 3});
}

/// mean(real) - mean(fake).
template <typename T>
Var wasserstein(Graph<T>& g, Var real_scores, Var fake_scores) {
  return g.sub(g.mean(real_scores), g.mean(fake_scores));
}

/// Squared L2 distance per row of two [B,3] nodes, averaged over B.
template <typename T>
Var mean_squared_distance(Graph<T>& g, Var a, Var b) {
  Var d = g.sum(g.square(g.sub(a, b)), 1);
  return g.mean(d);
}

/// mean_real ||D_aux(x) - A(x,m)||^2 + mean_fake ||D_aux(x~) - A(x~,m)||^2.
/// The fake half is optional.
template <typename T>
Var aux_color(Graph<T>& g, Var est_real, Var avg_real, std::optional<Var> est_fake = {},
              std::optional<Var> avg_fake = {}) {
  if (g.shape(est_real) != g.shape(avg_real))
    throw LossError("aux_color: real estimates and targets differ in length");
  Var loss = mean_squared_distance(g, est_real, avg_real);
  if (est_fake || avg_fake) {
    if (!est_fake || !avg_fake || g.shape(*est_fake) != g.shape(*avg_fake))
      throw LossError("aux_color: fake estimates and targets differ in length");
    loss = g.add(loss, mean_squared_distance(g, *est_fake, *avg_fake));
  }
  return loss;
}

template <typename T>
using CriticFn = std::function<Var(Graph<T>&, Var)>;

/// mean over pairs of (||grad_x D'(x^)||_2 - 1)^2 at x^ = u x_real + (1-u) x_fake.
/// The returned node is differentiable with respect to the critic parameters.
template <typename T>
Var gradient_penalty(Graph<T>& g, const CriticFn<T>& critic, const Tensor<T>& real,
                     const Tensor<T>& fake, std::span<const T> u) {
  if (real.shape() != fake.shape())
    throw LossError("gradient_penalty: real " + shape_str(real.shape()) + " vs fake " +
                    shape_str(fake.shape()));
  const int batch = real.dim(0);
  if (static_cast<int>(u.size()) != batch)
    throw LossError("gradient_penalty: need one interpolation weight per pair");
  Tensor<T> mix(real.shape());
  const std::size_t per = real.size() / static_cast<std::size_t>(batch);
  for (int b = 0; b < batch; ++b)
    for (std::size_t k = 0; k < per; ++k) {
      const std::size_t i = static_cast<std::size_t>(b) * per + k;
      mix[i] = u[static_cast<std::size_t>(b)] * real[i] + (T(1) - u[static_cast<std::size_t>(b)]) * fake[i];
    }
  Var x = g.constant(std::move(mix), "interpolate");
  Var out = critic(g, x);
  Var score = g.sum(g.slice(out, 1, 0, 1));
  const std::vector<Var> wrt{x};
  Var grad = g.gradients(score, wrt)[0];
  Shape reduce(g.shape(grad).size(), 1);
  reduce[0] = batch;
  Var norm = g.sqrt(g.sum_to(g.square(grad), reduce));
  return g.mean(g.square(g.add_scalar(norm, T(-1))));
}

/// mean over pairs of ||A_i - A_j||^2 for rows of a [B,3] average-color node.
template <typename T>
Var color_consistency(Graph<T>& g, Var averages, std::span<const Pair> pairs) {
  if (pairs.empty()) throw LossError("color_consistency: no pairs");
  std::vector<Var> terms;
  for (auto [i, j] : pairs) {
    Var d = g.sub(g.slice(averages, 0, i, 1), g.slice(averages, 0, j, 1));
    terms.push_back(g.sum(g.square(d)));
  }
  return g.mul_scalar(g.sum(g.concat(std::span<const Var>(terms), 0)), T(1) / static_cast<T>(terms.size()));
}

/// Channel planes of sample i as a [3, H*W] node.
template <typename T>
Var flat_sample(Graph<T>& g, Var images, int i) {
  const Shape& s = g.shape(images);
  return g.reshape(g.slice(images, 0, i, 1), {3, s[2] * s[3]});
}

template <typename T>
using LaplacianPtr = std::shared_ptr<const SparseSymmetricMatrix<T>>;

/// Frozen Laplacian of every sample in a [B,3,H,W] node.
template <typename T>
std::vector<LaplacianPtr<T>> laplacians(const Graph<T>& g, Var images,
                                        int radius = matting::kDefaultRadius,
                                        double epsilon = matting::kDefaultEpsilon) {
  const Tensor<T>& v = g.value(images);
  std::vector<LaplacianPtr<T>> out;
  for (int b = 0; b < v.dim(0); ++b)
    out.push_back(std::make_shared<const SparseSymmetricMatrix<T>>(matting::matting_laplacian(v, b, radius, epsilon)));
  return out;
}

/// Tr(v_i^T L_j v_i) + Tr(v_j^T L_i v_j) for one pair.
template <typename T>
Var texture_pair(Graph<T>& g, Var images_i, int i, const LaplacianPtr<T>& lap_i, Var images_j, int j,
                 const LaplacianPtr<T>& lap_j) {
  Var vi = flat_sample(g, images_i, i);
  Var vj = flat_sample(g, images_j, j);
  return g.add(matting::quadratic_form(g, lap_j, vi), matting::quadratic_form(g, lap_i, vj));
}

/// Texture consistency averaged over same-texture pairs within a batch.
template <typename T>
Var texture_consistency(Graph<T>& g, Var images, std::span<const Pair> pairs,
                        const std::vector<LaplacianPtr<T>>& laps) {
  if (pairs.empty()) throw LossError("texture_consistency: no pairs");
  if (static_cast<int>(laps.size()) != g.shape(images)[0])
    throw LossError("texture_consistency: one Laplacian per sample required");
  std::vector<Var> terms;
  for (auto [i, j] : pairs)
    terms.push_back(texture_pair(g, images, i, laps[static_cast<std::size_t>(i)], images, j,
                                 laps[static_cast<std::size_t>(j)]));
  return g.mul_scalar(g.sum(g.concat(std::span<const Var>(terms), 0)), T(1) / static_cast<T>(terms.size()));
}

/// Batch mean of (1/|1-m|) sum (1-m) * sum_ch |x - b|.
template <typename T>
Var shape_consistency(Graph<T>& g, Var images, Var masks, const Color& background) {
  const Shape& s = g.shape(images);
  const int batch = s.at(0);
  Var outside = g.add_scalar(g.neg(masks), T(1));
  Var counts = g.sum_to(outside, {batch, 1, 1, 1});
  for (T c : g.value(counts).values())
    if (!(c > T(0))) throw LossError("shape_consistency: mask leaves no background");
  Tensor<T> bg({1, 3, 1, 1});
  for (int c = 0; c < 3; ++c) bg[static_cast<std::size_t>(c)] = static_cast<T>(background[c]);
  Var dev = g.abs(g.sub(images, g.constant(bg)));
  Var per = g.div(g.sum_to(g.mul(dev, outside), {batch, 1, 1, 1}), counts);
  return g.mean(per);
}

/// Batch mean of ||c - A(x~, m)||^2.
template <typename T>
Var generator_color_check(Graph<T>& g, Var colors, Var averages) {
  return mean_squared_distance(g, colors, averages);
}

struct GeneratorTerms {
  std::optional<Var> wasserstein, aux, color, texture, shape, color_check;
};

struct CriticTerms {
  std::optional<Var> wasserstein, aux, penalty;
};

/// L_W + L_aux + lc L_c + lt L_t + ls L_s + lg L_g.
template <typename T>
Var generator_total(Graph<T>& g, const GeneratorTerms& t, const LossWeights& w) {
  if (!t.wasserstein || !t.aux || !t.color || !t.texture || !t.shape || !t.color_check)
    throw LossError("generator_total: missing term");
  Var total = g.add(*t.wasserstein, *t.aux);
  total = g.add(total, g.mul_scalar(*t.color, static_cast<T>(w.lambda_c)));
  total = g.add(total, g.mul_scalar(*t.texture, static_cast<T>(w.lambda_t)));
  total = g.add(total, g.mul_scalar(*t.shape, static_cast<T>(w.lambda_s)));
  total = g.add(total, g.mul_scalar(*t.color_check, static_cast<T>(w.lambda_g)));
  return total;
}

/// -(L_W - L_aux - lgp L_gp), minimized by the critic.
template <typename T>
Var critic_total(Graph<T>& g, const CriticTerms& t, const LossWeights& w) {
  if (!t.wasserstein || !t.aux || !t.penalty) throw LossError("critic_total: missing term");
  Var objective = g.sub(*t.wasserstein, *t.aux);
  objective = g.sub(objective, g.mul_scalar(*t.penalty, static_cast<T>(w.lambda_gp)));
  return g.neg(objective);
}

// ---------------------------------------------------------------------------
// Value forms.

inline Color to_color(const Tensor<double>& t, int row = 0) {
  return {t[static_cast<std::size_t>(row) * 3], t[static_cast<std::size_t>(row) * 3 + 1],
          t[static_cast<std::size_t>(row) * 3 + 2]};
}

inline Tensor<double> colors_tensor(std::span<const Color> colors) {
  Tensor<double> t({static_cast<int>(colors.size()), 3});
  for (std::size_t i = 0; i < colors.size(); ++i)
    for (int c = 0; c < 3; ++c) t[i * 3 + c] = colors[i][c];
  return t;
}

inline void check_same_size(const Image& x, const Mask& m) {
  if (x.height != m.height || x.width != m.width) throw LossError("image and mask sizes differ");
}

inline Color average_color(const Image& x, const Mask& m) {
  check_same_size(x, m);
  Graph<double> g;
  Var a = average_color(g, g.constant(image_to_tensor<double>(x)), g.constant(mask_to_tensor<double>(m)));
  return to_color(g.value(a));
}

inline double wasserstein_loss(std::span<const double> real, std::span<const double> fake) {
  if (real.empty() || fake.empty()) throw LossError("wasserstein_loss: empty score list");
  Graph<double> g;
  Var r = g.constant(Tensor<double>({static_cast<int>(real.size())}, {real.begin(), real.end()}));
  Var f = g.constant(Tensor<double>({static_cast<int>(fake.size())}, {fake.begin(), fake.end()}));
  return g.value(wasserstein(g, r, f)).item();
}

inline double aux_color_loss(std::span<const Color> est_real, std::span<const Color> avg_real,
                             std::span<const Color> est_fake = {}, std::span<const Color> avg_fake = {}) {
  if (est_real.size() != avg_real.size() || est_fake.size() != avg_fake.size())
    throw LossError("aux_color_loss: length mismatch");
  if (est_real.empty()) throw LossError("aux_color_loss: no real samples");
  Graph<double> g;
  std::optional<Var> ef, af;
  if (!est_fake.empty()) {
    ef = g.constant(colors_tensor(est_fake));
    af = g.constant(colors_tensor(avg_fake));
  }
  return g.value(aux_color(g, g.constant(colors_tensor(est_real)), g.constant(colors_tensor(avg_real)), ef, af)).item();
}

struct ImageMaskPair {
  Image first_image;
  Mask first_mask;
  Image second_image;
  Mask second_mask;
};

inline double color_consistency(std::span<const ImageMaskPair> pairs) {
  if (pairs.empty()) throw LossError("color_consistency: no pairs");
  std::vector<Image> images;
  std::vector<Mask> masks;
  std::vector<Pair> idx;
  for (const auto& p : pairs) {
    check_same_size(p.first_image, p.first_mask);
    check_same_size(p.second_image, p.second_mask);
    idx.emplace_back(static_cast<int>(images.size()), static_cast<int>(images.size()) + 1);
    images.push_back(p.first_image);
    images.push_back(p.second_image);
    masks.push_back(p.first_mask);
    masks.push_back(p.second_mask);
  }
  Graph<double> g;
  Var a = average_color(g, g.constant(images_to_tensor<double>(images)), g.constant(masks_to_tensor<double>(masks)));
  return g.value(color_consistency(g, a, idx)).item();
}

inline double texture_consistency(const Image& x1, const Image& x2) {
  if (x1.height != x2.height || x1.width != x2.width) throw LossError("texture_consistency: image sizes differ");
  const std::vector<Image> images{x1, x2};
  Graph<double> g;
  Var x = g.constant(images_to_tensor<double>(images));
  const auto laps = laplacians(g, x);
  const std::vector<Pair> pairs{{0, 1}};
  return g.value(texture_consistency(g, x, pairs, laps)).item();
}

inline double shape_consistency(const Image& x, const Mask& m, const Color& background = kWhite) {
  check_same_size(x, m);
  Graph<double> g;
  Var v = shape_consistency(g, g.constant(image_to_tensor<double>(x)), g.constant(mask_to_tensor<double>(m)), background);
  return g.value(v).item();
}

inline double generator_color_check(const Color& c, const Image& x, const Mask& m) {
  check_same_size(x, m);
  Graph<double> g;
  Var a = average_color(g, g.constant(image_to_tensor<double>(x)), g.constant(mask_to_tensor<double>(m)));
  const std::array<Color, 1> cs{c};
  return g.value(generator_color_check(g, g.constant(colors_tensor(cs)), a)).item();
}

/// Gradient penalty of a model's critic for one real/fake pair.
template <typename T>
double gradient_penalty(const GanModel<T>& model, const Image& real, const Image& fake, double u) {
  if (real.height != fake.height || real.width != fake.width)
    throw LossError("gradient_penalty: image sizes differ");
  Graph<T> g;
  const gan::Bound disc = gan::bind(g, model.critic, false);
  const CriticFn<T> critic = [&](Graph<T>& gg, Var x) { return gan::critic(gg, disc, model.config, x); };
  const std::array<T, 1> us{static_cast<T>(u)};
  Var p = gradient_penalty(g, critic, image_to_tensor<T>(real), image_to_tensor<T>(fake), std::span<const T>(us));
  return static_cast<double>(g.value(p).item());
}

}  // namespace disentangle::losses
