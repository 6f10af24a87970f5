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

// Command-line front end: synth, train, generate, invert, eval and serve.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "disentangle/checkpoint.hpp"
#include "disentangle/inversion.hpp"
#include "disentangle/service.hpp"
#include "disentangle/trainer.hpp"

namespace disentangle::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Thrown for argument values that parse but are unusable; maps to exit 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline Color hex_flag(const std::string& hex) {
  try {
    return parse_hex_color(hex);
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("--color: ") + e.what());
  }
}

inline std::vector<double> read_texture(const std::filesystem::path& path, int dim) {
  std::vector<double> t;
  try {
    t = nlohmann::json::parse(read_file(path)).get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("texture file " + path.string() + " must hold a JSON array of numbers: " + e.what());
  }
  if (static_cast<int>(t.size()) != dim)
    throw IoError("texture file " + path.string() + " has " + std::to_string(t.size()) + " entries, model expects " +
                  std::to_string(dim));
  return t;
}

}  // namespace detail

/// Parses `args` (args[0] is the program name) and runs one subcommand.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Conditional garment GAN with disentangled color, texture and shape inputs."};
  app.name(args.empty() ? "disentangle" : std::filesystem::path(args[0]).filename().string());
  app.require_subcommand(1);

  // synth
  int synth_n = 0, synth_size = 32;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Write a procedurally generated article dataset.");
  synth_cmd->add_option("--n", synth_n, "Number of articles")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "Dataset seed")->required();
  synth_cmd->add_option("--size", synth_size, "Image side in pixels (power of two, at least 8)")
      ->required()
      ->check(CLI::PositiveNumber);

  // train
  std::string train_config, train_out;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a JSON training config.");
  train_cmd->add_option("--config", train_config, "TrainConfig JSON file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Run directory (config, metrics, checkpoints, model.json)")->required();

  // generate
  std::string gen_ckpt, gen_color, gen_texture, gen_mask, gen_out;
  std::uint64_t gen_seed = 0;
  auto* generate_cmd = app.add_subcommand("generate", "Render one article from color, texture and shape.");
  generate_cmd->add_option("--ckpt", gen_ckpt, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  generate_cmd->add_option("--color", gen_color, "Average color as #rrggbb; channel v maps to v/127.5 - 1 in [-1, 1]")
      ->required();
  generate_cmd->add_option("--seed", gen_seed, "Seeds the texture latent and, without --mask, the silhouette")
      ->required();
  generate_cmd->add_option("--texture", gen_texture, "JSON array overriding the texture latent")
      ->check(CLI::ExistingFile);
  generate_cmd->add_option("--mask", gen_mask, "Shape mask PNG (white is inside)")->check(CLI::ExistingFile);
  generate_cmd->add_option("--out", gen_out, "Output PNG")->required();

  // invert
  std::string inv_ckpt, inv_image, inv_out;
  int inv_steps = inversion::InversionConfig{}.steps;
  auto* invert_cmd = app.add_subcommand("invert", "Recover color, texture and shape of a real article image.");
  invert_cmd->add_option("--ckpt", inv_ckpt, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  invert_cmd->add_option("--image", inv_image, "Article PNG on a white background")->required()->check(CLI::ExistingFile);
  invert_cmd->add_option("--out", inv_out, "Bundle directory (estimate.json, mask.png, reconstruction.png, trace.jsonl)")
      ->required();
  invert_cmd->add_option("--steps", inv_steps, "Texture optimization steps")->capture_default_str()->check(CLI::PositiveNumber);

  // eval
  std::string eval_ckpt, eval_report, eval_data;
  int eval_n = 256;
  std::uint64_t eval_seed = 99;
  auto* eval_cmd = app.add_subcommand("eval", "Disentanglement metrics over sampled attribute triples.");
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--n", eval_n, "Number of sampled triples (at least 64)")->required()->check(CLI::Range(64, 1 << 20));
  eval_cmd->add_option("--report", eval_report, "Output JSON report")->required();
  eval_cmd->add_option("--data", eval_data,
                   "Reference dataset directory; defaults to the default training set regenerated at the model size")
      ->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--seed", eval_seed, "Sampling seed")->capture_default_str();

  // serve
  std::string srv_ckpt, srv_host = "127.0.0.1";
  int srv_port = 0;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the HTTP API for the studio.");
  serve_cmd->add_option("--ckpt", srv_ckpt, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--port", srv_port, "TCP port")->required()->check(CLI::Range(1, 65535));
  serve_cmd->add_option("--host", srv_host, "Bind address")->capture_default_str();

  std::vector<std::string> rev;  // CLI11 consumes arguments from the back.
  for (std::size_t i = args.size(); i > 1; --i) rev.push_back(args[i - 1]);
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth_cmd->parsed()) {
      synth::SynthConfig sc;
      sc.image_size = synth_size;
      if (synth_size < 8 || (synth_size & (synth_size - 1)) != 0)
        throw UsageError("--size must be a power of two of at least 8");
      synth::write_dataset(synth::make_dataset(synth_n, synth_seed, sc), synth_out);
      out << "wrote " << synth_n << " articles to " << synth_out << "\n";
    } else if (train_cmd->parsed()) {
      TrainConfig c;
      try {
        c = nlohmann::json::parse(read_file(train_config)).get<TrainConfig>();
      } catch (const nlohmann::json::exception& e) {
        throw UsageError("--config: " + std::string(e.what()));
      }
      try {
        c.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError("--config: " + std::string(e.what()));
      }
      const std::int64_t every = std::max<std::int64_t>(1, c.steps / 20);
      TrainOptions opt;
      opt.on_step = [&](const StepMetrics& m) {
        if (m.step % every == 0 || m.step == c.steps)
          err << "step " << m.step << "/" << c.steps << " critic " << m.critic_total << " generator " << m.gen_total
              << "\n";
      };
      train<float>(c, train_out, opt);
      out << "wrote " << (std::filesystem::path(train_out) / "model.json").string() << "\n";
    } else if (generate_cmd->parsed()) {
      const Color color = detail::hex_flag(gen_color);
      const auto model = load_checkpoint<float>(gen_ckpt);
      const auto& mc = model.config;
      AttributeTriple t;
      t.color = color;
      t.texture = gen_texture.empty() ? service::texture_from_seed(gen_seed, mc.texture_dim)
                                      : detail::read_texture(gen_texture, mc.texture_dim);
      if (gen_mask.empty()) {
        synth::SynthConfig sc;
        sc.image_size = mc.image_size;
        std::mt19937_64 rng(gen_seed);
        t.mask = synth::synth_article(rng, sc).mask;
      } else {
        t.mask = png::read_mask(gen_mask);
      }
      png::write_image(gan::generate(model, t), gen_out);
      out << "wrote " << gen_out << "\n";
    } else if (invert_cmd->parsed()) {
      const auto model = load_checkpoint<float>(inv_ckpt);
      inversion::InversionConfig ic;
      ic.steps = inv_steps;
      const auto result = inversion::invert(model, png::read_image(inv_image), ic);
      inversion::write_bundle(result, inv_out);
      out << "best step " << result.best_step << " objective " << result.final_terms.objective << "\n";
    } else if (eval_cmd->parsed()) {
      const auto model = load_checkpoint<float>(eval_ckpt);
      synth::Dataset data;
      if (!eval_data.empty()) {
        data = synth::load_dataset(eval_data);
      } else {
        TrainConfig c;
        c.model = model.config;
        data = load_or_make_dataset(c);
      }
      std::mt19937_64 rng(eval_seed);
      const EvalReport r = eval_model(model, data, eval_n, rng);
      write_file_atomic(eval_report, nlohmann::json(r).dump(2));
      out << nlohmann::json(r).dump() << "\n";
    } else if (serve_cmd->parsed()) {
      service::Service svc(load_checkpoint<float>(srv_ckpt));
      err << "listening on " << srv_host << ":" << srv_port << "\n";
      if (!service::serve(svc, srv_host, srv_port)) throw IoError("cannot listen on " + srv_host + ":" +
                                                                  std::to_string(srv_port));
    }
  } catch (const UsageError& e) {
    err << app.name() << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << app.name() << ": " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

inline int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace disentangle::cli
