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

// Alternating critic / generator training on combinatorial batches, and the
// disentanglement evaluation harness.

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "disentangle/adam.hpp"
#include "disentangle/checkpoint.hpp"
#include "disentangle/gan.hpp"
#include "disentangle/gmm.hpp"
#include "disentangle/losses.hpp"
#include "disentangle/synthdata.hpp"
#include "json.hpp"

namespace disentangle {


struct TrainConfig {
  GanConfig model;
  losses::LossWeights weights;
  AdamHyper adam;
  int n_critic = 1;
  std::int64_t steps = 10000;
  std::int64_t checkpoint_interval = 1000;
  /// Dataset directory; empty means synthesize `dataset_size` articles from `seed`.
  std::string dataset_path;
  int dataset_size = 2000;
  std::uint64_t seed = 1;
  double matting_epsilon = matting::kDefaultEpsilon;
  /// Applied to the texture term before lambda_t.
  losses::TextureScale texture_scale = losses::TextureScale::kPerPixel;

  void validate() const {
    model.validate();
    const auto& w = weights;
    if (w.lambda_c < 0 || w.lambda_t < 0 || w.lambda_s < 0 || w.lambda_g < 0 || w.lambda_gp < 0)
      throw std::invalid_argument("loss weights must be nonnegative");
    if (!(adam.lr > 0) || adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1 || !(adam.eps > 0))
      throw std::invalid_argument("invalid ADAM hyperparameters");
    if (n_critic < 1) throw std::invalid_argument("n_critic must be at least 1");
    if (steps < 1) throw std::invalid_argument("steps must be positive");
    if (checkpoint_interval < 1) throw std::invalid_argument("checkpoint_interval must be positive");
    if (dataset_path.empty() && dataset_size < 2) throw std::invalid_argument("dataset_size must be at least 2");
    if (!(matting_epsilon > 0)) throw std::invalid_argument("matting_epsilon must be positive");
  }

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) {
    return a.model == b.model && a.weights == b.weights && a.adam.lr == b.adam.lr && a.adam.beta1 == b.adam.beta1 &&
           a.adam.beta2 == b.adam.beta2 && a.adam.eps == b.adam.eps && a.n_critic == b.n_critic &&
           a.steps == b.steps && a.checkpoint_interval == b.checkpoint_interval &&
           a.dataset_path == b.dataset_path && a.dataset_size == b.dataset_size && a.seed == b.seed &&
           a.matting_epsilon == b.matting_epsilon && a.texture_scale == b.texture_scale;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"weights", c.weights},
       {"adam", c.adam},
       {"n_critic", c.n_critic},
       {"steps", c.steps},
       {"checkpoint_interval", c.checkpoint_interval},
       {"dataset_path", c.dataset_path},
       {"dataset_size", c.dataset_size},
       {"seed", c.seed},
       {"matting_epsilon", c.matting_epsilon},
       {"texture_scale", c.texture_scale}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.model = j.value("model", d.model);
  c.weights = j.value("weights", d.weights);
  c.adam = j.value("adam", d.adam);
  c.n_critic = j.value("n_critic", d.n_critic);
  c.steps = j.value("steps", d.steps);
  c.checkpoint_interval = j.value("checkpoint_interval", d.checkpoint_interval);
  c.dataset_path = j.value("dataset_path", d.dataset_path);
  c.dataset_size = j.value("dataset_size", d.dataset_size);
  c.seed = j.value("seed", d.seed);
  c.matting_epsilon = j.value("matting_epsilon", d.matting_epsilon);
  c.texture_scale = j.value("texture_scale", d.texture_scale);
}

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Combinatorial batch.

/// Index of triple (color i, texture j, mask k) in the batch.
constexpr int batch_index(int color, int texture, int mask) { return color * 4 + texture * 2 + mask; }

/// All 2^3 combinations in lexicographic (color, texture, mask) order.
inline std::vector<AttributeTriple> combinatorial_batch(const Color& c1, const Color& c2,
                                                        const std::vector<double>& t1,
                                                        const std::vector<double>& t2, const Mask& m1,
                                                        const Mask& m2) {
  const std::array<const Color*, 2> cs{&c1, &c2};
  const std::array<const std::vector<double>*, 2> ts{&t1, &t2};
  const std::array<const Mask*, 2> ms{&m1, &m2};
  std::vector<AttributeTriple> out;
  out.reserve(8);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k) out.push_back({*cs[i], *ts[j], *ms[k]});
  return out;
}

enum class Attribute { kColor, kTexture, kMask };

/// Unordered pairs of batch indices sharing the given attribute value:
/// 2 groups of 4 triples, C(4,2) pairs each, in ascending order.
inline std::vector<losses::Pair> same_attribute_pairs(Attribute a) {
  std::vector<losses::Pair> out;
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) {
      const int shift = a == Attribute::kColor ? 2 : a == Attribute::kTexture ? 1 : 0;
      if (((i >> shift) & 1) == ((j >> shift) & 1)) out.emplace_back(i, j);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Training state.

template <typename T>
struct Trainer {
  TrainConfig config;
  GanModel<T> model;
  synth::Dataset dataset;
  std::vector<Mask> mask_pool;
  AdamState<T> gen_state, emb_state, critic_state;
  std::mt19937_64 rng;

  Trainer(TrainConfig cfg, synth::Dataset data)
      : config(std::move(cfg)), dataset(std::move(data)), rng(config.seed) {
    config.validate();
    if (dataset.articles.empty()) throw std::invalid_argument("trainer: empty dataset");
    if (dataset.config.image_size != config.model.image_size)
      throw std::invalid_argument("trainer: dataset images are " + std::to_string(dataset.config.image_size) +
                                  " pixels, model expects " + std::to_string(config.model.image_size));
    model = gan::init_model<T>(config.model);
    mask_pool = dataset.masks();
  }
};

struct StepMetrics {
  std::int64_t step = 0;
  double critic_total = 0, critic_wasserstein = 0, critic_aux = 0, critic_penalty = 0;
  double gen_total = 0, gen_wasserstein = 0, gen_aux = 0, gen_color = 0, gen_texture = 0, gen_shape = 0,
         gen_color_check = 0;
  double seconds = 0;

  friend bool operator==(const StepMetrics&, const StepMetrics&) = default;
};

inline void to_json(nlohmann::json& j, const StepMetrics& m) {
  j = {{"step", m.step},
       {"critic_total", m.critic_total},
       {"critic_wasserstein", m.critic_wasserstein},
       {"critic_aux", m.critic_aux},
       {"critic_penalty", m.critic_penalty},
       {"gen_total", m.gen_total},
       {"gen_wasserstein", m.gen_wasserstein},
       {"gen_aux", m.gen_aux},
       {"gen_color", m.gen_color},
       {"gen_texture", m.gen_texture},
       {"gen_shape", m.gen_shape},
       {"gen_color_check", m.gen_color_check},
       {"seconds", m.seconds}};
}

namespace detail {

template <typename T>
std::vector<AttributeTriple> sample_combinatorial(Trainer<T>& tr) {
  const int dt = tr.config.model.texture_dim;
  const Color c1 = synth::sample_color(tr.rng), c2 = synth::sample_color(tr.rng);
  const auto t1 = synth::sample_texture(tr.rng, dt), t2 = synth::sample_texture(tr.rng, dt);
  const std::span<const Mask> pool(tr.mask_pool);
  const Mask& m1 = synth::sample_mask(pool, tr.rng);
  const Mask* m2 = &synth::sample_mask(pool, tr.rng);
  for (int i = 0; i < 16 && *m2 == m1 && pool.size() > 1; ++i) m2 = &synth::sample_mask(pool, tr.rng);
  return combinatorial_batch(c1, c2, t1, t2, m1, *m2);
}

template <typename T>
std::vector<const synth::SynthArticle*> sample_real(Trainer<T>& tr, int n) {
  std::vector<const synth::SynthArticle*> out;
  std::uniform_int_distribution<std::size_t> pick(0, tr.dataset.articles.size() - 1);
  for (int i = 0; i < n; ++i) out.push_back(&tr.dataset.articles[pick(tr.rng)]);
  return out;
}

/// Generator forward on a combinatorial batch; the mask embedder runs once
/// per distinct mask (batch index parity).
template <typename T>
Var generate_combinatorial(Graph<T>& g, const gan::Bound& gen, const gan::Bound& emb, const GanConfig& cfg,
                           std::span<const AttributeTriple> triples) {
  const std::vector<Mask> distinct{triples[0].mask, triples[1].mask};
  Var e = gan::embed(g, emb, cfg, g.constant(masks_to_tensor<T>(distinct)));
  Var e0 = g.slice(e, 0, 0, 1), e1 = g.slice(e, 0, 1, 1);
  std::vector<Var> rows;
  for (int i = 0; i < 8; ++i) rows.push_back(i % 2 == 0 ? e0 : e1);
  Var embeddings = g.concat(std::span<const Var>(rows), 0);
  return gan::generator(g, gen, cfg, g.constant(gan::colors_to_tensor<T>(triples)),
                        g.constant(gan::textures_to_tensor<T>(triples, cfg.texture_dim)), embeddings);
}

template <typename T>
double scalar(const Graph<T>& g, Var v) {
  return static_cast<double>(g.value(v).item());
}

template <typename T>
void check_params(const ParamSet<T>& ps, const std::string& what) {
  for (const auto& [name, t] : ps)
    if (!t.all_finite()) throw TrainingError(what + ": parameter '" + name + "' became non-finite");
}

}  // namespace detail

/// One critic update on 8 real and 8 generated images.
template <typename T>
void critic_step(Trainer<T>& tr, StepMetrics& m) {
  const GanConfig& cfg = tr.config.model;
  const auto triples = detail::sample_combinatorial(tr);
  const auto real = detail::sample_real(tr, 8);
  std::vector<T> u(8);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (auto& v : u) v = static_cast<T>(ud(tr.rng));

  Tensor<T> fake_images;
  {
    Graph<T> g;
    const auto gen = gan::bind(g, tr.model.generator, false);
    const auto emb = gan::bind(g, tr.model.embedder, false);
    fake_images = g.value(detail::generate_combinatorial(g, gen, emb, cfg, triples));
  }
  std::vector<Image> real_images;
  std::vector<Mask> masks;
  for (const auto* a : real) {
    real_images.push_back(a->image);
    masks.push_back(a->mask);
  }
  for (const auto& t : triples) masks.push_back(t.mask);
  const Tensor<T> real_tensor = images_to_tensor<T>(real_images);

  Graph<T> g;
  const auto disc = gan::bind(g, tr.model.critic, true);
  Var images = g.concat({g.constant(real_tensor), g.constant(fake_images)}, 0);
  Var out = gan::critic(g, disc, cfg, images);
  Var scores = g.slice(out, 1, 0, 1);
  Var est = g.slice(out, 1, 1, 3);
  Var avg = losses::average_color(g, images, g.constant(masks_to_tensor<T>(masks)));
  losses::CriticTerms terms;
  terms.wasserstein = losses::wasserstein(g, g.slice(scores, 0, 0, 8), g.slice(scores, 0, 8, 8));
  terms.aux = losses::aux_color(g, g.slice(est, 0, 0, 8), g.slice(avg, 0, 0, 8), g.slice(est, 0, 8, 8),
                                g.slice(avg, 0, 8, 8));
  const losses::CriticFn<T> critic_fn = [&](Graph<T>& gg, Var x) { return gan::critic(gg, disc, cfg, x); };
  terms.penalty = losses::gradient_penalty(g, critic_fn, real_tensor, fake_images, std::span<const T>(u));
  Var total = losses::critic_total(g, terms, tr.config.weights);
  m.critic_wasserstein = detail::scalar(g, *terms.wasserstein);
  m.critic_aux = detail::scalar(g, *terms.aux);
  m.critic_penalty = detail::scalar(g, *terms.penalty);
  m.critic_total = detail::scalar(g, total);
  const auto grads = g.backward(total);
  adam_step(tr.model.critic, grads, tr.critic_state, tr.config.adam);
  detail::check_params(tr.model.critic, "critic update");
}

/// One generator + embedder update on a fresh combinatorial batch.
template <typename T>
void generator_step(Trainer<T>& tr, StepMetrics& m) {
  const GanConfig& cfg = tr.config.model;
  const auto triples = detail::sample_combinatorial(tr);
  const auto real = detail::sample_real(tr, 8);
  std::vector<Image> real_images;
  std::vector<Mask> real_masks, masks;
  for (const auto* a : real) {
    real_images.push_back(a->image);
    real_masks.push_back(a->mask);
  }
  for (const auto& t : triples) masks.push_back(t.mask);

  Graph<T> g;
  const auto gen = gan::bind(g, tr.model.generator, true);
  const auto emb = gan::bind(g, tr.model.embedder, true);
  const auto disc = gan::bind(g, tr.model.critic, false);
  Var x = detail::generate_combinatorial(g, gen, emb, cfg, triples);
  Var mask_var = g.constant(masks_to_tensor<T>(masks));
  Var avg = losses::average_color(g, x, mask_var);
  Var out_fake = gan::critic(g, disc, cfg, x);
  Var real_x = g.constant(images_to_tensor<T>(real_images));
  Var out_real = gan::critic(g, disc, cfg, real_x);
  Var avg_real = losses::average_color(g, real_x, g.constant(masks_to_tensor<T>(real_masks)));

  const auto color_pairs = same_attribute_pairs(Attribute::kColor);
  const auto texture_pairs = same_attribute_pairs(Attribute::kTexture);
  const auto laps = losses::laplacians(g, x, matting::kDefaultRadius, tr.config.matting_epsilon);

  losses::GeneratorTerms terms;
  terms.wasserstein = losses::wasserstein(g, g.slice(out_real, 1, 0, 1), g.slice(out_fake, 1, 0, 1));
  terms.aux = losses::aux_color(g, g.slice(out_real, 1, 1, 3), avg_real, g.slice(out_fake, 1, 1, 3), avg);
  terms.color = losses::color_consistency(g, avg, color_pairs);
  const double tex_scale = losses::texture_scale_factor(tr.config.texture_scale, cfg.image_size, cfg.image_size);
  terms.texture = g.mul_scalar(losses::texture_consistency(g, x, texture_pairs, laps), static_cast<T>(tex_scale));
  terms.shape = losses::shape_consistency(g, x, mask_var, tr.config.weights.background);
  terms.color_check = losses::generator_color_check(g, g.constant(gan::colors_to_tensor<T>(triples)), avg);
  Var total = losses::generator_total(g, terms, tr.config.weights);
  m.gen_wasserstein = detail::scalar(g, *terms.wasserstein);
  m.gen_aux = detail::scalar(g, *terms.aux);
  m.gen_color = detail::scalar(g, *terms.color);
  m.gen_texture = detail::scalar(g, *terms.texture);
  m.gen_shape = detail::scalar(g, *terms.shape);
  m.gen_color_check = detail::scalar(g, *terms.color_check);
  m.gen_total = detail::scalar(g, total);
  const auto grads = g.backward(total);
  NamedTensors<T> gen_grads, emb_grads;
  for (const auto& [name, t] : grads) (name.starts_with("gen.") ? gen_grads : emb_grads).emplace(name, t);
  adam_step(tr.model.generator, gen_grads, tr.gen_state, tr.config.adam);
  adam_step(tr.model.embedder, emb_grads, tr.emb_state, tr.config.adam);
  detail::check_params(tr.model.generator, "generator update");
  detail::check_params(tr.model.embedder, "embedder update");
}

inline std::string describe_metrics(const StepMetrics& m) {
  return nlohmann::json(m).dump();
}

/// n_critic critic updates then one generator update.
template <typename T>
StepMetrics train_step(Trainer<T>& tr) {
  const auto start = std::chrono::steady_clock::now();
  StepMetrics m;
  m.step = tr.model.step + 1;
  try {
    for (int i = 0; i < tr.config.n_critic; ++i) critic_step(tr, m);
    generator_step(tr, m);
  } catch (const NonFiniteError& e) {
    throw TrainingError("non-finite value at step " + std::to_string(m.step) + ": " + e.what() +
                        "; terms so far " + describe_metrics(m));
  }
  for (double v : {m.critic_total, m.gen_total})
    if (!std::isfinite(v))
      throw TrainingError("non-finite loss at step " + std::to_string(m.step) + ": " + describe_metrics(m));
  tr.model.step = m.step;
  m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return m;
}

inline synth::Dataset load_or_make_dataset(const TrainConfig& c) {
  if (!c.dataset_path.empty()) return synth::load_dataset(c.dataset_path);
  synth::SynthConfig sc;
  sc.image_size = c.model.image_size;
  sc.background = c.weights.background;
  return synth::make_dataset(c.dataset_size, c.seed, sc);
}

struct TrainOptions {
  std::function<void(const StepMetrics&)> on_step;
};

/// Full run: writes config.json, metrics.jsonl (one line per step),
/// checkpoints/step_NNNNNNNN.json at the configured interval and model.json.
template <typename T = float>
GanModel<T> train(const TrainConfig& config, const std::filesystem::path& out_dir, const TrainOptions& opt = {}) {
  Trainer<T> tr(config, load_or_make_dataset(config));
  std::filesystem::create_directories(out_dir / "checkpoints");
  write_file_atomic(out_dir / "config.json", nlohmann::json(config).dump(2));
  const auto log_path = out_dir / "metrics.jsonl";
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path.string());
  for (std::int64_t s = 0; s < config.steps; ++s) {
    const StepMetrics m = train_step(tr);
    log << nlohmann::json(m).dump() << '\n';
    if (!log) throw IoError("failed writing " + log_path.string());
    if (opt.on_step) opt.on_step(m);
    if (m.step % config.checkpoint_interval == 0) {
      char name[40];
      std::snprintf(name, sizeof name, "step_%08lld.json", static_cast<long long>(m.step));
      save_checkpoint(tr.model, out_dir / "checkpoints" / name);
    }
  }
  log.flush();
  save_checkpoint(tr.model, out_dir / "model.json");
  return tr.model;
}

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalReport {
  std::int64_t step = 0;
  int samples = 0;
  double color_error_mean = 0, color_error_p50 = 0, color_error_p90 = 0, color_error_max = 0;
  double mask_threshold = 0.1;
  double mask_iou_median = 0, mask_iou_mean = 0;
  int texture_trials = 0;
  double texture_same_mean = 0, texture_different_mean = 0, texture_win_rate = 0;
  int correlation_samples = 0;
  double pearson_r = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalReport, step, samples, color_error_mean, color_error_p50, color_error_p90,
                                   color_error_max, mask_threshold, mask_iou_median, mask_iou_mean, texture_trials,
                                   texture_same_mean, texture_different_mean, texture_win_rate,
                                   correlation_samples, pearson_r)

/// Maps attribute triples to images; the trained generator or a reference renderer.
using Renderer = std::function<std::vector<Image>(std::span<const AttributeTriple>)>;
/// Critic scores of images.
using Scorer = std::function<std::vector<double>(std::span<const Image>)>;

inline double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i] / n, mb += b[i] / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct EvalOptions {
  int texture_dim = 32;
  Color background = kWhite;
  double mask_threshold = 0.1;
  int batch = 32;
  std::int64_t step = 0;
};

/// Color error, article IoU, texture win rate and (with a scorer) the
/// critic-score / color-likelihood correlation over n sampled triples.
template <typename Rng>
EvalReport eval_disentanglement(const Renderer& render, const Scorer* scorer, const synth::Dataset& dataset, int n,
                                Rng& rng, const EvalOptions& opt) {
  if (n < 64) throw std::invalid_argument("eval_disentanglement: n must be at least 64");
  const auto pool = dataset.masks();
  const std::span<const Mask> pool_span(pool);
  auto render_checked = [&](const std::vector<AttributeTriple>& ts) {
    std::vector<Image> out;
    for (std::size_t i = 0; i < ts.size(); i += static_cast<std::size_t>(opt.batch)) {
      const auto len = std::min(ts.size() - i, static_cast<std::size_t>(opt.batch));
      auto part = render(std::span<const AttributeTriple>(ts.data() + i, len));
      for (auto& im : part) {
        for (float v : im.data)
          if (!std::isfinite(v)) throw std::runtime_error("eval_disentanglement: renderer produced non-finite pixels");
        out.push_back(std::move(im));
      }
    }
    return out;
  };
  auto draw = [&](const Color& c, const std::vector<double>& t, const Mask& m) { return AttributeTriple{c, t, m}; };

  EvalReport r;
  r.step = opt.step;
  r.samples = n;
  r.mask_threshold = opt.mask_threshold;

  // Single samples: color error, IoU, critic scores.
  std::vector<AttributeTriple> singles;
  for (int i = 0; i < n; ++i)
    singles.push_back(draw(synth::sample_color(rng), synth::sample_texture(rng, opt.texture_dim),
                           synth::sample_mask(pool_span, rng)));
  const auto images = render_checked(singles);
  std::vector<double> errors, ious;
  for (int i = 0; i < n; ++i) {
    const Color a = synth::masked_mean(images[i], singles[i].mask);
    double e = 0;
    for (int c = 0; c < 3; ++c) e = std::max(e, std::abs(a[c] - singles[i].color[c]));
    errors.push_back(e);
    ious.push_back(synth::mask_iou(synth::article_region(images[i], opt.background, opt.mask_threshold), singles[i].mask));
  }
  for (double e : errors) r.color_error_mean += e / n;
  r.color_error_p50 = quantile(errors, 0.5);
  r.color_error_p90 = quantile(errors, 0.9);
  r.color_error_max = *std::max_element(errors.begin(), errors.end());
  for (double v : ious) r.mask_iou_mean += v / n;
  r.mask_iou_median = quantile(ious, 0.5);

  // Texture trials: anchor (c1, ta, m) against (c2, ta, m) and (c2, tb, m).
  std::vector<AttributeTriple> tex;
  for (int i = 0; i < n; ++i) {
    const Color c1 = synth::sample_color(rng), c2 = synth::sample_color(rng);
    const auto ta = synth::sample_texture(rng, opt.texture_dim), tb = synth::sample_texture(rng, opt.texture_dim);
    const Mask& m = synth::sample_mask(pool_span, rng);
    tex.push_back(draw(c1, ta, m));
    tex.push_back(draw(c2, ta, m));
    tex.push_back(draw(c2, tb, m));
  }
  const auto tex_images = render_checked(tex);
  int wins = 0;
  for (int i = 0; i < n; ++i) {
    const Image& anchor = tex_images[3 * i];
    const double same = losses::texture_consistency(anchor, tex_images[3 * i + 1]);
    const double diff = losses::texture_consistency(anchor, tex_images[3 * i + 2]);
    r.texture_same_mean += same / n;
    r.texture_different_mean += diff / n;
    wins += same < diff;
  }
  r.texture_trials = n;
  r.texture_win_rate = static_cast<double>(wins) / n;

  if (scorer) {
    const auto colors = dataset.colors();
    std::mt19937_64 gmm_rng(rng());
    GmmOptions gopt;
    gopt.components = std::clamp(static_cast<int>(colors.size() / 10), 1, gopt.components);
    const ColorGmm gmm = fit_color_gmm(std::span<const Color>(colors), gmm_rng, gopt);
    std::vector<double> ll, scores;
    for (std::size_t i = 0; i < images.size(); i += static_cast<std::size_t>(opt.batch)) {
      const auto len = std::min(images.size() - i, static_cast<std::size_t>(opt.batch));
      for (double s : (*scorer)(std::span<const Image>(images.data() + i, len))) scores.push_back(s);
    }
    for (const auto& t : singles) ll.push_back(gmm_loglik(gmm, t.color));
    r.correlation_samples = n;
    r.pearson_r = pearson(ll, scores);
  }
  return r;
}

template <typename T, typename Rng>
EvalReport eval_model(const GanModel<T>& model, const synth::Dataset& dataset, int n, Rng& rng,
                      const Color& background = kWhite) {
  const Renderer render = [&](std::span<const AttributeTriple> ts) { return gan::generate_batch(model, ts); };
  const Scorer score = [&](std::span<const Image> xs) {
    std::vector<double> out;
    for (const auto& o : gan::discriminate_batch(model, xs)) {
      if (!std::isfinite(o.score)) throw std::runtime_error("eval_model: critic produced a non-finite score");
      out.push_back(o.score);
    }
    return out;
  };
  EvalOptions opt;
  opt.texture_dim = model.config.texture_dim;
  opt.background = background;
  opt.step = model.step;
  return eval_disentanglement(render, &score, dataset, n, rng, opt);
}

}  // namespace disentangle
