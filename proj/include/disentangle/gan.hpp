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

// Generator G(c, t, m), dual-head critic D and the mask embedder.
//
//   generator: concat(c, t, embed(m)) -> dense 4x4xC0 -> [convT 4x4/2]* -> conv 3x3 -> tanh
//   critic:    x -> conv 3x3 -> [conv 4x4/2]* down to 4x4 -> dense -> (score, r, g, b)
//   embedder:  critic trunk on the 1-channel mask -> dense d_e -> L2 normalize
//
// Every hidden layer is followed by a leaky rectifier. There is no
// normalization layer anywhere, so each sample's critic output depends on
// that sample alone.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "disentangle/adam.hpp"
#include "disentangle/graph.hpp"
#include "disentangle/image.hpp"
#include "disentangle/tensor.hpp"
#include "json.hpp"

namespace disentangle {

struct GanConfig {
  int image_size = 32;
  int texture_dim = 32;
  int embed_dim = 32;
  int gen_channels = 64;        // at the 4x4 base, halved per upsampling block
  int gen_min_channels = 16;
  int disc_channels = 16;       // after the first conv, doubled per downsampling block
  int disc_max_channels = 64;
  std::uint64_t init_seed = 1;

  int blocks() const {
    int n = 0;
    for (int s = image_size; s > 4; s /= 2) ++n;
    return n;
  }
  int input_dim() const { return 3 + texture_dim + embed_dim; }

  void validate() const {
    int s = image_size;
    while (s > 4 && s % 2 == 0) s /= 2;
    if (s != 4 || image_size < 8)
      throw std::invalid_argument("image_size must be 4 * 2^k with k >= 1, got " +
                                  std::to_string(image_size));
    if (texture_dim < 2 || embed_dim < 1 || gen_channels < 1 || gen_min_channels < 1 ||
        disc_channels < 1 || disc_max_channels < 1)
      throw std::invalid_argument("GAN dimensions must be positive (texture_dim >= 2)");
  }

  friend bool operator==(const GanConfig&, const GanConfig&) = default;
};

inline void to_json(nlohmann::json& j, const GanConfig& c) {
  j = {{"image_size", c.image_size},       {"texture_dim", c.texture_dim},
       {"embed_dim", c.embed_dim},         {"gen_channels", c.gen_channels},
       {"gen_min_channels", c.gen_min_channels}, {"disc_channels", c.disc_channels},
       {"disc_max_channels", c.disc_max_channels}, {"init_seed", c.init_seed}};
}

inline void from_json(const nlohmann::json& j, GanConfig& c) {
  GanConfig d;
  c.image_size = j.value("image_size", d.image_size);
  c.texture_dim = j.value("texture_dim", d.texture_dim);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.gen_channels = j.value("gen_channels", d.gen_channels);
  c.gen_min_channels = j.value("gen_min_channels", d.gen_min_channels);
  c.disc_channels = j.value("disc_channels", d.disc_channels);
  c.disc_max_channels = j.value("disc_max_channels", d.disc_max_channels);
  c.init_seed = j.value("init_seed", d.init_seed);
}

/// Generator conditioning: average color, texture latent, shape mask.
struct AttributeTriple {
  Color color{};
  std::vector<double> texture;
  Mask mask;
};

struct CriticOutput {
  double score = 0;
  Color color_estimate{};
};

template <typename T>
struct GanModel {
  GanConfig config;
  ParamSet<T> generator;
  ParamSet<T> critic;
  ParamSet<T> embedder;
  std::int64_t step = 0;

  template <typename U>
  GanModel<U> cast() const {
    GanModel<U> out;
    out.config = config;
    out.step = step;
    for (const auto& [k, v] : generator) out.generator.emplace(k, v.template cast<U>());
    for (const auto& [k, v] : critic) out.critic.emplace(k, v.template cast<U>());
    for (const auto& [k, v] : embedder) out.embedder.emplace(k, v.template cast<U>());
    return out;
  }
};

namespace gan {

namespace detail {

template <typename T>
Tensor<T> he_normal(std::mt19937_64& rng, Shape shape, double fan_in) {
  std::normal_distribution<double> n(0.0, std::sqrt(2.0 / fan_in));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<T>(n(rng));
  return t;
}

inline int gen_width(const GanConfig& c, int level) {
  return std::max(c.gen_channels >> level, c.gen_min_channels);
}

inline int disc_width(const GanConfig& c, int level) {
  int w = c.disc_channels;
  for (int i = 0; i < level; ++i) w = std::min(w * 2, c.disc_max_channels);
  return std::min(w, c.disc_max_channels);
}

template <typename T>
void init_trunk(ParamSet<T>& p, const std::string& prefix, const GanConfig& c, int in_channels,
                int outputs, std::mt19937_64& rng) {
  int width = disc_width(c, 0);
  p[prefix + ".in.w"] = he_normal<T>(rng, {width, in_channels, 3, 3}, in_channels * 9.0);
  p[prefix + ".in.b"] = Tensor<T>({width});
  for (int i = 0; i < c.blocks(); ++i) {
    const int next = disc_width(c, i + 1);
    p[prefix + ".down" + std::to_string(i) + ".w"] = he_normal<T>(rng, {next, width, 4, 4}, width * 16.0);
    p[prefix + ".down" + std::to_string(i) + ".b"] = Tensor<T>({next});
    width = next;
  }
  const int flat = width * 16;
  p[prefix + ".out.w"] = he_normal<T>(rng, {flat, outputs}, flat);
  p[prefix + ".out.b"] = Tensor<T>({outputs});
}

}  // namespace detail

/// Fresh seeded model.
template <typename T>
GanModel<T> init_model(const GanConfig& config) {
  config.validate();
  GanModel<T> m;
  m.config = config;
  std::mt19937_64 rng(config.init_seed);
  const int c0 = detail::gen_width(config, 0);
  m.generator["gen.base.w"] = detail::he_normal<T>(rng, {config.input_dim(), c0 * 16}, config.input_dim());
  m.generator["gen.base.b"] = Tensor<T>({c0 * 16});
  int width = c0;
  for (int i = 0; i < config.blocks(); ++i) {
    const int next = detail::gen_width(config, i + 1);
    // Each output pixel of a stride-2 4x4 transposed conv sees 2x2 taps per channel.
    m.generator["gen.up" + std::to_string(i) + ".w"] =
        detail::he_normal<T>(rng, {width, next, 4, 4}, width * 4.0);
    m.generator["gen.up" + std::to_string(i) + ".b"] = Tensor<T>({next});
    width = next;
  }
  m.generator["gen.out.w"] = detail::he_normal<T>(rng, {3, width, 3, 3}, width * 9.0);
  m.generator["gen.out.b"] = Tensor<T>({3});
  detail::init_trunk(m.critic, "disc", config, 3, 4, rng);
  detail::init_trunk(m.embedder, "emb", config, 1, config.embed_dim, rng);
  return m;
}

/// Parameters placed on a graph, either trainable or frozen.
struct Bound {
  std::map<std::string, Var> vars;
  Var operator[](const std::string& name) const {
    auto it = vars.find(name);
    if (it == vars.end()) throw std::out_of_range("missing parameter '" + name + "'");
    return it->second;
  }
};

template <typename T>
Bound bind(Graph<T>& g, const ParamSet<T>& params, bool trainable) {
  Bound b;
  for (const auto& [name, value] : params)
    b.vars[name] = trainable ? g.parameter(name, value) : g.constant(value, name);
  return b;
}

namespace detail {

template <typename T>
Var add_channel_bias(Graph<T>& g, Var x, Var bias) {
  const int c = g.shape(bias)[0];
  return g.add(x, g.reshape(bias, {1, c, 1, 1}));
}

template <typename T>
Var trunk(Graph<T>& g, const Bound& p, const std::string& prefix, const GanConfig& c, Var x) {
  Var h = g.leaky_relu(add_channel_bias(g, g.conv2d(x, p[prefix + ".in.w"], 1, 1), p[prefix + ".in.b"]));
  for (int i = 0; i < c.blocks(); ++i) {
    const std::string n = prefix + ".down" + std::to_string(i);
    h = g.leaky_relu(add_channel_bias(g, g.conv2d(h, p[n + ".w"], 2, 1), p[n + ".b"]));
  }
  const Shape s = g.shape(h);
  h = g.reshape(h, {s[0], s[1] * s[2] * s[3]});
  return g.add(g.matmul(h, p[prefix + ".out.w"]), p[prefix + ".out.b"]);
}

}  // namespace detail

/// [B,1,H,W] masks -> [B,d_e] unit vectors.
template <typename T>
Var embed(Graph<T>& g, const Bound& emb, const GanConfig& c, Var masks) {
  return g.l2_normalize(detail::trunk(g, emb, "emb", c, masks));
}

/// [B,3,H,W] images -> [B,4]; column 0 is the critic score, 1..3 the color estimate.
template <typename T>
Var critic(Graph<T>& g, const Bound& disc, const GanConfig& c, Var images) {
  return detail::trunk(g, disc, "disc", c, images);
}

/// colors [B,3], textures [B,d_t], embeddings [B,d_e] -> images [B,3,H,W] in [-1,1].
template <typename T>
Var generator(Graph<T>& g, const Bound& gen, const GanConfig& c, Var colors, Var textures,
              Var embeddings) {
  Var z = g.concat({colors, textures, embeddings}, 1);
  const int batch = g.shape(z)[0];
  Var h = g.leaky_relu(g.add(g.matmul(z, gen["gen.base.w"]), gen["gen.base.b"]));
  h = g.reshape(h, {batch, detail::gen_width(c, 0), 4, 4});
  for (int i = 0; i < c.blocks(); ++i) {
    const std::string n = "gen.up" + std::to_string(i);
    h = g.leaky_relu(detail::add_channel_bias(g, g.conv_transpose2d(h, gen[n + ".w"], 2, 1), gen[n + ".b"]));
  }
  return g.tanh(detail::add_channel_bias(g, g.conv2d(h, gen["gen.out.w"], 1, 1), gen["gen.out.b"]));
}

inline void validate_mask(const GanConfig& c, const Mask& m) {
  if (m.height != c.image_size || m.width != c.image_size)
    throw std::invalid_argument("mask is " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                                ", model expects " + std::to_string(c.image_size));
  for (auto v : m.data)
    if (v > 1) throw std::invalid_argument("mask is not binary");
}

inline void validate_triple(const GanConfig& c, const AttributeTriple& t) {
  for (double v : t.color)
    if (!(v >= -1.0 && v <= 1.0)) throw std::invalid_argument("color component outside [-1, 1]");
  if (static_cast<int>(t.texture.size()) != c.texture_dim)
    throw std::invalid_argument("texture has " + std::to_string(t.texture.size()) +
                                " components, model expects " + std::to_string(c.texture_dim));
  for (double v : t.texture)
    if (!std::isfinite(v)) throw std::invalid_argument("texture component is not finite");
  validate_mask(c, t.mask);
}

template <typename T>
Tensor<T> colors_to_tensor(std::span<const AttributeTriple> triples) {
  Tensor<T> out({static_cast<int>(triples.size()), 3});
  for (std::size_t i = 0; i < triples.size(); ++i)
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = static_cast<T>(triples[i].color[c]);
  return out;
}

template <typename T>
Tensor<T> textures_to_tensor(std::span<const AttributeTriple> triples, int dim) {
  Tensor<T> out({static_cast<int>(triples.size()), dim});
  for (std::size_t i = 0; i < triples.size(); ++i)
    for (int k = 0; k < dim; ++k) out[i * dim + k] = static_cast<T>(triples[i].texture[static_cast<std::size_t>(k)]);
  return out;
}

/// Unit-norm embedding of one mask.
template <typename T>
std::vector<double> embed_mask(const GanModel<T>& model, const Mask& mask) {
  validate_mask(model.config, mask);
  Graph<T> g;
  const Bound emb = bind(g, model.embedder, false);
  Var e = embed(g, emb, model.config, g.constant(mask_to_tensor<T>(mask)));
  const auto& v = g.value(e);
  return std::vector<double>(v.values().begin(), v.values().end());
}

template <typename T>
std::vector<Image> generate_batch(const GanModel<T>& model, std::span<const AttributeTriple> triples) {
  if (triples.empty()) return {};
  std::vector<Mask> masks;
  for (const auto& t : triples) {
    validate_triple(model.config, t);
    masks.push_back(t.mask);
  }
  Graph<T> g;
  const Bound gen = bind(g, model.generator, false);
  const Bound emb = bind(g, model.embedder, false);
  Var e = embed(g, emb, model.config, g.constant(masks_to_tensor<T>(masks)));
  Var x = generator(g, gen, model.config, g.constant(colors_to_tensor<T>(triples)),
                    g.constant(textures_to_tensor<T>(triples, model.config.texture_dim)), e);
  const Tensor<T> images = g.value(x);
  std::vector<Image> out;
  for (std::size_t i = 0; i < triples.size(); ++i) out.push_back(tensor_to_image(images, static_cast<int>(i)));
  return out;
}

template <typename T>
Image generate(const GanModel<T>& model, const AttributeTriple& triple) {
  return generate_batch(model, std::span<const AttributeTriple>(&triple, 1)).front();
}

template <typename T>
std::vector<CriticOutput> discriminate_batch(const GanModel<T>& model, std::span<const Image> images) {
  if (images.empty()) return {};
  for (const auto& im : images)
    if (im.height != model.config.image_size || im.width != model.config.image_size)
      throw std::invalid_argument("image is " + std::to_string(im.height) + "x" + std::to_string(im.width) +
                                  ", model expects " + std::to_string(model.config.image_size));
  Graph<T> g;
  const Bound disc = bind(g, model.critic, false);
  Var out = critic(g, disc, model.config, g.constant(images_to_tensor<T>(images)));
  const auto& v = g.value(out);
  std::vector<CriticOutput> result(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    result[i].score = static_cast<double>(v[i * 4]);
    for (int c = 0; c < 3; ++c) result[i].color_estimate[c] = static_cast<double>(v[i * 4 + 1 + c]);
  }
  return result;
}

template <typename T>
CriticOutput discriminate(const GanModel<T>& model, const Image& image) {
  return discriminate_batch(model, std::span<const Image>(&image, 1)).front();
}

}  // namespace gan
}  // namespace disentangle
