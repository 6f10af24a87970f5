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

// Attribute estimation for an existing article image and texture recovery
// through the generator:
//
//   t^ = argmin_t  |x - G(c^, t, m^)|_1 + beta_t L_t(x, G(c^, t, m^)) + beta_kl KL(t)
//
// with c^ and m^ estimated directly from the image.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "disentangle/adam.hpp"
#include "disentangle/gan.hpp"
#include "disentangle/graph.hpp"
#include "disentangle/image.hpp"
#include "disentangle/io.hpp"
#include "disentangle/losses.hpp"
#include "disentangle/matting.hpp"
#include "disentangle/png.hpp"
#include "disentangle/synthdata.hpp"
#include "json.hpp"

namespace disentangle::inversion {

class InversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kSigmaFloor = 1e-6;

struct InversionConfig {
  double beta_t = 1.0;
  double beta_kl = 0.1;
  int steps = 500;
  AdamHyper adam{0.05, 0.9, 0.999, 1e-8};
  /// Per-channel distance from the background above which a pixel is article.
  double mask_threshold = 0.1;
  /// Masks covering more than this fraction of the image are rejected.
  double max_coverage = 0.95;
  Color background = kWhite;
  /// The generated image's Laplacian is rebuilt every this many steps.
  int refresh_interval = 25;
  losses::TextureScale texture_scale = losses::TextureScale::kPerPixel;
  double matting_epsilon = matting::kDefaultEpsilon;

  void validate() const {
    if (beta_t < 0 || beta_kl < 0) throw std::invalid_argument("inversion betas must be nonnegative");
    if (steps < 1) throw std::invalid_argument("inversion steps must be at least 1");
    if (refresh_interval < 1) throw std::invalid_argument("refresh_interval must be at least 1");
    if (!(adam.lr > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 || !(adam.eps > 0))
      throw std::invalid_argument("invalid ADAM hyperparameters");
    if (!(mask_threshold >= 0)) throw std::invalid_argument("mask_threshold must be nonnegative");
    if (!(max_coverage > 0 && max_coverage <= 1)) throw std::invalid_argument("max_coverage must be in (0, 1]");
    if (!(matting_epsilon > 0)) throw std::invalid_argument("matting_epsilon must be positive");
  }
};

inline void to_json(nlohmann::json& j, const InversionConfig& c) {
  j = {{"beta_t", c.beta_t},
       {"beta_kl", c.beta_kl},
       {"steps", c.steps},
       {"adam", c.adam},
       {"mask_threshold", c.mask_threshold},
       {"max_coverage", c.max_coverage},
       {"background", c.background},
       {"refresh_interval", c.refresh_interval},
       {"texture_scale", c.texture_scale},
       {"matting_epsilon", c.matting_epsilon}};
}

inline void from_json(const nlohmann::json& j, InversionConfig& c) {
  const InversionConfig d;
  c.beta_t = j.value("beta_t", d.beta_t);
  c.beta_kl = j.value("beta_kl", d.beta_kl);
  c.steps = j.value("steps", d.steps);
  c.adam = j.value("adam", d.adam);
  c.mask_threshold = j.value("mask_threshold", d.mask_threshold);
  c.max_coverage = j.value("max_coverage", d.max_coverage);
  c.background = j.value("background", d.background);
  c.refresh_interval = j.value("refresh_interval", d.refresh_interval);
  c.texture_scale = j.value("texture_scale", d.texture_scale);
  c.matting_epsilon = j.value("matting_epsilon", d.matting_epsilon);
}

struct Terms {
  double l1 = 0, texture = 0, kl = 0, objective = 0;
  friend bool operator==(const Terms&, const Terms&) = default;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(Terms, l1, texture, kl, objective)

struct TraceEntry {
  int step = 0;
  Terms terms;
  /// Lowest objective seen up to and including this step.
  double best_objective = 0;
};

inline void to_json(nlohmann::json& j, const TraceEntry& e) {
  j = {{"step", e.step},
       {"l1", e.terms.l1},
       {"texture", e.terms.texture},
       {"kl", e.terms.kl},
       {"objective", e.terms.objective},
       {"best_objective", e.best_objective}};
}

inline void from_json(const nlohmann::json& j, TraceEntry& e) {
  e.step = j.at("step").get<int>();
  e.terms = {j.at("l1").get<double>(), j.at("texture").get<double>(), j.at("kl").get<double>(),
             j.at("objective").get<double>()};
  e.best_objective = j.at("best_objective").get<double>();
}

struct InversionResult {
  AttributeTriple estimate;
  Image reconstruction;
  std::vector<TraceEntry> trace;
  int best_step = 0;
  /// Terms at the returned (best) iterate.
  Terms final_terms;
};

// ---------------------------------------------------------------------------
// Attribute estimates.

inline Mask estimate_mask(const Image& x, const InversionConfig& config = {}) {
  const Mask m = synth::article_region(x, config.background, config.mask_threshold);
  const auto count = m.count();
  if (count == 0) throw InversionError("no article found");
  if (static_cast<double>(count) > config.max_coverage * static_cast<double>(m.data.size()))
    throw InversionError("article region covers " + std::to_string(count) + " of " +
                         std::to_string(m.data.size()) + " pixels; background not found");
  return m;
}

inline Color estimate_color(const Image& x, const Mask& m) {
  if (m.height != x.height || m.width != x.width) throw InversionError("estimate_color: mask and image sizes differ");
  if (m.count() == 0) throw InversionError("estimate_color: empty mask");
  Color c = synth::masked_mean(x, m);
  for (double& v : c) v = std::clamp(v, -1.0, 1.0);
  return c;
}

/// log s + (1 + mu^2) / (2 s^2) - 1/2 with mu, s the mean and standard
/// deviation of the elements of t (s floored at 1e-6).
inline double kl_to_standard_normal(std::span<const double> t) {
  if (t.size() < 2) throw std::invalid_argument("kl_to_standard_normal: need at least 2 elements");
  const double n = static_cast<double>(t.size());
  double mu = 0;
  for (double v : t) mu += v;
  mu /= n;
  double var = 0;
  for (double v : t) var += (v - mu) * (v - mu);
  var /= n;
  const double s = std::max(std::sqrt(var), kSigmaFloor);
  return std::log(s) + (1.0 + mu * mu) / (2.0 * s * s) - 0.5;
}

/// Graph form over a [1, d] or [d] node. The floor branch carries no
/// gradient through s.
template <typename T>
Var kl_to_standard_normal(Graph<T>& g, Var t) {
  const auto n = numel(g.shape(t));
  if (n < 2) throw std::invalid_argument("kl_to_standard_normal: need at least 2 elements");
  Var mu = g.mean(t);
  Var var = g.mean(g.square(g.sub(t, mu)));
  const T floor2 = static_cast<T>(kSigmaFloor * kSigmaFloor);
  if (!(g.value(var).item() > floor2)) var = g.constant(floor2);
  Var log_s = g.mul_scalar(g.log(var), T(0.5));
  Var ratio = g.div(g.add_scalar(g.square(mu), T(1)), g.mul_scalar(var, T(2)));
  return g.add_scalar(g.add(log_s, ratio), T(-0.5));
}

// ---------------------------------------------------------------------------
// Texture optimization.

using StepCallback = std::function<void(const TraceEntry&)>;

template <typename T>
InversionResult optimize_texture(const GanModel<T>& model, const Image& x, const Color& color, const Mask& mask,
                                 const InversionConfig& config = {}, const StepCallback& on_step = {}) {
  config.validate();
  const GanConfig& gc = model.config;
  if (x.height != gc.image_size || x.width != gc.image_size)
    throw InversionError("image is " + std::to_string(x.height) + "x" + std::to_string(x.width) +
                         ", model expects " + std::to_string(gc.image_size));
  gan::validate_mask(gc, mask);
  if (mask.count() == 0) throw InversionError("optimize_texture: empty mask");

  const auto embedding = gan::embed_mask(model, mask);
  Tensor<T> emb_tensor({1, gc.embed_dim});
  for (int i = 0; i < gc.embed_dim; ++i) emb_tensor[static_cast<std::size_t>(i)] = static_cast<T>(embedding[i]);
  Tensor<T> color_tensor({1, 3});
  for (int c = 0; c < 3; ++c) color_tensor[static_cast<std::size_t>(c)] = static_cast<T>(color[c]);
  const Tensor<T> x_tensor = image_to_tensor<T>(x);
  const auto lap_x = std::make_shared<const SparseSymmetricMatrix<T>>(
      matting::matting_laplacian(x_tensor, 0, matting::kDefaultRadius, config.matting_epsilon));
  const T tex_scale = static_cast<T>(losses::texture_scale_factor(config.texture_scale, gc.image_size, gc.image_size));

  ParamSet<T> params;
  params["t"] = Tensor<T>({1, gc.texture_dim});
  AdamState<T> state;
  losses::LaplacianPtr<T> lap_fake;

  InversionResult result;
  Tensor<T> best_t = params["t"];
  double best = std::numeric_limits<double>::infinity();

  for (int step = 0; step <= config.steps; ++step) {
    Graph<T> g;
    const auto gen = gan::bind(g, model.generator, false);
    Var t = g.parameter("t", params["t"]);
    Var fake = gan::generator(g, gen, gc, g.constant(color_tensor), t, g.constant(emb_tensor));
    if (step % config.refresh_interval == 0)
      lap_fake = std::make_shared<const SparseSymmetricMatrix<T>>(
          matting::matting_laplacian(g.value(fake), 0, matting::kDefaultRadius, config.matting_epsilon));
    Var real = g.constant(x_tensor);
    Var l1 = g.mean(g.abs(g.sub(real, fake)));
    Var tex = g.mul_scalar(losses::texture_pair(g, real, 0, lap_x, fake, 0, lap_fake), tex_scale);
    Var kl = kl_to_standard_normal(g, t);
    Var objective = g.add(g.add(l1, g.mul_scalar(tex, static_cast<T>(config.beta_t))),
                          g.mul_scalar(kl, static_cast<T>(config.beta_kl)));

    TraceEntry e;
    e.step = step;
    e.terms = {static_cast<double>(g.value(l1).item()), static_cast<double>(g.value(tex).item()),
               static_cast<double>(g.value(kl).item()), static_cast<double>(g.value(objective).item())};
    if (!std::isfinite(e.terms.objective)) {
      nlohmann::json tail = nlohmann::json::array();
      for (std::size_t i = result.trace.size() > 5 ? result.trace.size() - 5 : 0; i < result.trace.size(); ++i)
        tail.push_back(result.trace[i]);
      tail.push_back(e);
      throw InversionError("non-finite objective at step " + std::to_string(step) + "; trace tail " + tail.dump());
    }
    if (e.terms.objective < best) {
      best = e.terms.objective;
      best_t = params["t"];
      result.best_step = step;
      result.final_terms = e.terms;
    }
    e.best_objective = best;
    result.trace.push_back(e);
    if (on_step) on_step(e);
    if (step == config.steps) break;
    adam_step(params, g.backward(objective), state, config.adam);
  }

  result.estimate.color = color;
  result.estimate.mask = mask;
  result.estimate.texture.assign(best_t.values().begin(), best_t.values().end());
  result.reconstruction = gan::generate(model, result.estimate);
  return result;
}

/// Estimate mask and color, then optimize the texture.
template <typename T>
InversionResult invert(const GanModel<T>& model, const Image& x, const InversionConfig& config = {},
                       const StepCallback& on_step = {}) {
  config.validate();
  const Mask m = estimate_mask(x, config);
  return optimize_texture(model, x, estimate_color(x, m), m, config, on_step);
}

// ---------------------------------------------------------------------------
// Edits.

struct Overrides {
  std::optional<Color> color;
  std::optional<std::vector<double>> texture;
  std::optional<Mask> mask;
};

inline AttributeTriple merge(const AttributeTriple& base, const Overrides& o) {
  AttributeTriple t = base;
  if (o.color) t.color = *o.color;
  if (o.texture) t.texture = *o.texture;
  if (o.mask) t.mask = *o.mask;
  return t;
}

/// Generator applied to the estimate with any subset of attributes replaced.
template <typename T>
Image edit(const GanModel<T>& model, const InversionResult& result, const Overrides& overrides = {}) {
  const AttributeTriple t = merge(result.estimate, overrides);
  try {
    gan::validate_triple(model.config, t);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(std::string("edit: invalid override: ") + e.what());
  }
  return gan::generate(model, t);
}

// ---------------------------------------------------------------------------
// Result bundle: estimate.json, mask.png, reconstruction.png, trace.jsonl.

inline void write_bundle(const InversionResult& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  png::write_mask(r.estimate.mask, dir / "mask.png");
  png::write_image(r.reconstruction, dir / "reconstruction.png");
  std::string trace;
  for (const auto& e : r.trace) trace += nlohmann::json(e).dump() + "\n";
  write_file_atomic(dir / "trace.jsonl", trace);
  const nlohmann::json estimate = {{"color", r.estimate.color},
                                   {"texture", r.estimate.texture},
                                   {"mask", "mask.png"},
                                   {"reconstruction", "reconstruction.png"},
                                   {"trace", "trace.jsonl"},
                                   {"best_step", r.best_step},
                                   {"final", r.final_terms}};
  write_file_atomic(dir / "estimate.json", estimate.dump(2));
}

inline InversionResult read_bundle(const std::filesystem::path& dir) {
  InversionResult r;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "estimate.json"));
    r.estimate.color = j.at("color").get<Color>();
    r.estimate.texture = j.at("texture").get<std::vector<double>>();
    r.best_step = j.at("best_step").get<int>();
    r.final_terms = j.at("final").get<Terms>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed inversion estimate in " + dir.string() + ": " + e.what());
  }
  r.estimate.mask = png::read_mask(dir / j.at("mask").get<std::string>());
  r.reconstruction = png::read_image(dir / j.at("reconstruction").get<std::string>());
  std::ifstream in(dir / j.at("trace").get<std::string>());
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) r.trace.push_back(nlohmann::json::parse(line).get<TraceEntry>());
  return r;
}

}  // namespace disentangle::inversion
