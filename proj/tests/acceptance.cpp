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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--run DIR] [--config FILE] [--only NAME]
//
// The desk-scale training criterion evaluates DIR/model.json and trains it
// from FILE first when it is missing.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "disentangle/checkpoint.hpp"
#include "disentangle/inversion.hpp"
#include "disentangle/trainer.hpp"
#include "support/cli_smoke.hpp"
#include "support/eval_support.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "support/loss_cases.hpp"
#include "support/matting_suite.hpp"
#include "support/op_cases.hpp"

namespace {

using namespace disentangle;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cases = testing::operator_cases(2026, 4);
  for (auto& c : testing::loss_cases(77, 3)) cases.push_back(std::move(c));
  double worst = 0;
  std::string worst_name;
  bool degenerate = false;
  for (const auto& c : cases) {
    const auto r = testing::gradcheck(c.inputs, c.build);
    if (!(r.relative_error <= worst)) worst = r.relative_error, worst_name = c.name;
    if (!(r.analytic_norm > 0)) degenerate = true;
  }
  const double secs = seconds_since(t0);
  return {cases.size() >= 100 && worst < 1e-4 && !degenerate && secs < 120,
          fmt("%zu cases, worst relative error %.2e (%s), %.1f s", cases.size(), worst, worst_name.c_str(), secs)};
}

Outcome matting_suite() {
  const auto r = testing::run_matting_suite(2026);
  return {r.pass(), fmt("%d images, %d dense cases, symmetric=%d, max row sum %.1e, min vLv/|v|^2 %.1e, "
                        "offset change %.1e, dense error %.1e, %.2f s",
                        r.images, r.dense_cases, r.symmetric, r.max_row_sum, r.worst_psd, r.max_offset_change,
                        r.max_dense_error, r.seconds)};
}

Mask random_mask(std::mt19937_64& rng, int h, int w) {
  Mask m(h, w);
  std::bernoulli_distribution coin(0.5);
  for (auto& v : m.data) v = coin(rng);
  m.data.front() = 1;
  m.data.back() = 0;
  return m;
}

Outcome closed_forms() {
  // KL of N(mu, s) against N(0, 1) in the inversion prior's form.
  auto oracle = [](double mu, double s) { return std::log(s) + (1 + mu * mu) / (2 * s * s) - 0.5; };
  struct KlCase {
    std::vector<double> t;
    double mu, s;
  };
  const KlCase kl[] = {{{-1, 1}, 0, 1}, {{0, 2}, 1, 1}, {{-2, 2}, 0, 2}};
  double kl_err = 0;
  for (const auto& c : kl) kl_err = std::max(kl_err, std::abs(inversion::kl_to_standard_normal(c.t) - oracle(c.mu, c.s)));
  const bool kl_ok = inversion::kl_to_standard_normal(kl[0].t) == 0.0 && oracle(1, 1) == 0.5 &&
                     std::abs(oracle(0, 2) - 0.31815) < 5e-6 && kl_err < 1e-6;

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  double avg_err = 0, w_err = 0, shape_err = 0;
  for (int i = 0; i < 100; ++i) {
    const Image x = testing::random_image(rng, 4, 5);
    const Mask m = random_mask(rng, 4, 5);
    Color s{};
    double n = 0;
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 5; ++xx) {
        n += m.at(y, xx);
        for (int c = 0; c < 3; ++c) s[c] += m.at(y, xx) * static_cast<double>(x.at(y, xx, c));
      }
    const Color a = losses::average_color(x, m);
    for (int c = 0; c < 3; ++c) avg_err = std::max(avg_err, std::abs(a[c] - s[c] / n));

    std::vector<double> real(1 + i % 7), fake(1 + i % 5);
    for (auto& v : real) v = 3 * u(rng);
    for (auto& v : fake) v = 3 * u(rng);
    double sr = 0, sf = 0;
    for (double v : real) sr += v;
    for (double v : fake) sf += v;
    w_err = std::max(w_err, std::abs(losses::wasserstein_loss(real, fake) - (sr / real.size() - sf / fake.size())));

    const Color b{u(rng), u(rng), u(rng)};
    double acc = 0, out = 0;
    for (int y = 0; y < 4; ++y)
      for (int xx = 0; xx < 5; ++xx)
        if (!m.at(y, xx)) {
          out += 1;
          for (int c = 0; c < 3; ++c) acc += std::abs(x.at(y, xx, c) - b[c]);
        }
    shape_err = std::max(shape_err, std::abs(losses::shape_consistency(x, m, b) - acc / out));
  }
  return {kl_ok && avg_err < 1e-9 && w_err < 1e-9 && shape_err < 1e-9,
          fmt("KL (0,1)=%g (1,1)=%.9f (0,2)=%.9f max KL error %.1e; average_color %.1e, wasserstein %.1e, "
              "shape %.1e over 100 cases each",
              inversion::kl_to_standard_normal(kl[0].t), inversion::kl_to_standard_normal(kl[1].t),
              inversion::kl_to_standard_normal(kl[2].t), kl_err, avg_err, w_err, shape_err)};
}

Outcome combinatorial() {
  std::mt19937_64 rng(17);
  const GanConfig cfg = testing::tiny_config();
  const auto reference = std::vector<std::vector<losses::Pair>>{same_attribute_pairs(Attribute::kColor),
                                                                same_attribute_pairs(Attribute::kTexture),
                                                                same_attribute_pairs(Attribute::kMask)};
  int reps = 0, failures = 0;
  for (; reps < 100; ++reps) {
    const auto a = testing::random_triple(rng, cfg);
    auto b = testing::random_triple(rng, cfg);
    while (b.mask == a.mask) b = testing::random_triple(rng, cfg);
    const auto batch = combinatorial_batch(a.color, b.color, a.texture, b.texture, a.mask, b.mask);
    bool ok = batch.size() == 8;
    const Color cs[2] = {a.color, b.color};
    const std::vector<double> ts[2] = {a.texture, b.texture};
    const Mask ms[2] = {a.mask, b.mask};
    for (int c = 0; c < 2 && ok; ++c)
      for (int t = 0; t < 2; ++t)
        for (int m = 0; m < 2; ++m) {
          const auto& e = batch[batch_index(c, t, m)];
          ok = ok && e.color == cs[c] && e.texture == ts[t] && e.mask == ms[m];
        }
    for (int v = 0; v < 2 && ok; ++v) {
      ok = ok && std::count_if(batch.begin(), batch.end(), [&](const auto& x) { return x.color == cs[v]; }) == 4;
      ok = ok && std::count_if(batch.begin(), batch.end(), [&](const auto& x) { return x.texture == ts[v]; }) == 4;
      ok = ok && std::count_if(batch.begin(), batch.end(), [&](const auto& x) { return x.mask == ms[v]; }) == 4;
    }
    const Attribute attrs[] = {Attribute::kColor, Attribute::kTexture, Attribute::kMask};
    for (std::size_t k = 0; k < 3; ++k) {
      const auto pairs = same_attribute_pairs(attrs[k]);
      ok = ok && pairs.size() == 12 && pairs == reference[k] && pairs == testing::pairs_by_value(batch, attrs[k]);
    }
    if (!ok) ++failures;
  }
  return {failures == 0, fmt("%d random batches, %d violations of composition, value counts or pair order", reps,
                             failures)};
}

// ---------------------------------------------------------------------------
// Desk-scale run.

struct Desk {
  fs::path run_dir;
  fs::path config_path;
  std::optional<GanModel<float>> model;
  TrainConfig config;
  std::string error;
};

Desk& desk_model(Desk& d) {
  if (d.model || !d.error.empty()) return d;
  try {
    const auto model_path = d.run_dir / "model.json";
    if (!fs::exists(model_path)) {
      std::printf("  training desk model into %s (this takes a while)\n", d.run_dir.string().c_str());
      std::fflush(stdout);
      TrainConfig c = nlohmann::json::parse(read_file(d.config_path)).get<TrainConfig>();
      TrainOptions opt;
      opt.on_step = [&](const StepMetrics& m) {
        if (m.step % 1000 == 0) {
          std::printf("  step %lld\n", static_cast<long long>(m.step));
          std::fflush(stdout);
        }
      };
      train<float>(c, d.run_dir, opt);
    }
    d.config = nlohmann::json::parse(read_file(d.run_dir / "config.json")).get<TrainConfig>();
    d.model = load_checkpoint<float>(model_path);
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  return d;
}

Outcome desk_training(Desk& desk) {
  if (!desk_model(desk).model) return {false, "no model: " + desk.error};
  const auto& m = *desk.model;
  const auto& c = desk.config;
  const auto data = load_or_make_dataset(c);
  std::mt19937_64 rng(99);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalReport r = eval_model(m, data, 256, rng, c.weights.background);
  const bool setup = m.config.image_size == 32 && data.articles.size() == 2000 && m.step >= 10000;
  const bool a = r.color_error_mean <= 0.15;
  const bool b = r.mask_iou_median >= 0.75;
  const bool cc = r.texture_win_rate >= 0.7;
  const bool d = std::abs(r.pearson_r) < 0.5;
  return {setup && a && b && cc && d,
          fmt("%dx%d, %zu articles, %lld steps; color error mean %.4f (<=0.15 %s), median IoU %.4f (>=0.75 %s), "
              "texture win rate %.4f (>=0.7 %s), Pearson r %.4f (|r|<0.5 %s); eval %.1f s",
              m.config.image_size, m.config.image_size, data.articles.size(), static_cast<long long>(m.step),
              r.color_error_mean, a ? "ok" : "MISS", r.mask_iou_median, b ? "ok" : "MISS", r.texture_win_rate,
              cc ? "ok" : "MISS", r.pearson_r, d ? "ok" : "MISS", seconds_since(t0))};
}

Outcome eval_self_test() {
  const auto data = testing::eval_dataset();
  std::mt19937_64 rng(4);
  const EvalReport r = eval_disentanglement(testing::oracle_renderer(), nullptr, data, 256, rng, EvalOptions{});
  return {r.color_error_max <= 1e-6 && r.mask_iou_median >= 0.98 && r.texture_win_rate >= 0.9,
          fmt("ground-truth renderer: max color error %.2e, median IoU %.4f, texture win rate %.4f", r.color_error_max,
              r.mask_iou_median, r.texture_win_rate)};
}

Outcome inversion_checks(Desk& desk) {
  // Estimators on 50 synthetic articles.
  const auto data = synth::make_dataset(50, 777, synth::SynthConfig{});
  double min_iou = 1, max_color = 0;
  for (const auto& a : data.articles) {
    const Mask m = inversion::estimate_mask(a.image);
    min_iou = std::min(min_iou, synth::mask_iou(m, a.mask));
    const Color c = inversion::estimate_color(a.image, m);
    for (int k = 0; k < 3; ++k) max_color = std::max(max_color, std::abs(c[k] - a.true_avg_color[k]));
  }
  const bool estimators = min_iou >= 0.9 && max_color <= 0.02;
  std::string detail = fmt("50 articles: min mask IoU %.4f, max color error %.4f", min_iou, max_color);

  // Self-inversion of images generated by the desk model.
  if (!desk_model(desk).model) return {false, detail + "; no model for self-inversion: " + desk.error};
  const auto& model = *desk.model;
  const auto pool = load_or_make_dataset(desk.config);
  std::mt19937_64 rng(4242);
  std::vector<double> reductions;
  int failures = 0;
  bool monotone = true;
  const int n = 20;
  for (int k = 0; k < n; ++k) {
    const AttributeTriple t{synth::sample_color(rng), synth::sample_texture(rng, model.config.texture_dim),
                            synth::sample_mask(std::span<const Mask>(pool.masks()), rng)};
    const Image x = gan::generate(model, t);
    try {
      const auto r = inversion::optimize_texture(model, x, t.color, t.mask, inversion::InversionConfig{});
      for (std::size_t i = 1; i < r.trace.size(); ++i)
        if (r.trace[i].best_objective > r.trace[i - 1].best_objective) monotone = false;
      reductions.push_back(1.0 - r.final_terms.l1 / r.trace.front().terms.l1);
    } catch (const std::exception&) {
      ++failures;
    }
  }
  std::vector<double> sorted = reductions;
  std::sort(sorted.begin(), sorted.end());
  const double median = sorted.empty() ? 0.0 : quantile(sorted, 0.5);
  const bool self = failures == 0 && median >= 0.30 && monotone;
  detail += fmt("; self-inversion of %d generated images with known color and mask (500 steps): "
                "median L1 reduction %.1f%%, min %.1f%%, %d failed, best objective monotone=%d",
                n, 100 * median, sorted.empty() ? 0.0 : 100 * sorted.front(), failures, monotone);
  return {estimators && self, detail};
}

Outcome round_trips() {
  const auto dir = testing::scratch_dir("acceptance_roundtrip");
  std::mt19937_64 rng(8);
  // Checkpoint.
  GanConfig gc;
  gc.init_seed = 3;
  const auto model = gan::init_model<float>(gc);
  save_checkpoint(model, dir / "m.json");
  const auto back = load_checkpoint<float>(dir / "m.json");
  bool ckpt = true;
  for (int k = 0; k < 4; ++k) {
    const auto t = testing::random_triple(rng, gc);
    const Image a = gan::generate(model, t), b = gan::generate(back, t);
    const auto ca = gan::discriminate(model, a), cb = gan::discriminate(back, a);
    ckpt = ckpt && a == b && ca.score == cb.score && ca.color_estimate == cb.color_estimate;
  }
  // PNG image and mask.
  double png_err = 0;
  bool mask_ok = true;
  for (int k = 0; k < 20; ++k) {
    const Image x = testing::random_image(rng, 5 + k, 32);
    png::write_image(x, dir / "x.png");
    const Image y = png::read_image(dir / "x.png");
    for (std::size_t i = 0; i < x.data.size(); ++i)
      png_err = std::max(png_err, std::abs(static_cast<double>(x.data[i]) - y.data[i]));
    const Mask m = random_mask(rng, 7 + k, 32);
    png::write_mask(m, dir / "m.png");
    mask_ok = mask_ok && png::read_mask(dir / "m.png") == m;
  }
  // Half a byte step on the [-1, 1] scale, plus float slack.
  const double png_tol = 1.0 / 255.0 + 1e-6;
  // TrainConfig.
  TrainConfig tc;
  tc.steps = 1234;
  tc.weights.lambda_t = 3.5;
  tc.adam.beta2 = 0.9;
  tc.texture_scale = losses::TextureScale::kNone;
  tc.dataset_path = "some/dir";
  const TrainConfig tback = nlohmann::json::parse(nlohmann::json(tc).dump()).get<TrainConfig>();
  const bool cfg_ok = tback == tc && !(tback == TrainConfig{});
  fs::remove_all(dir);
  return {ckpt && png_err <= png_tol && mask_ok && cfg_ok,
          fmt("checkpoint inference-identical=%d; PNG max error %.6f (1/255 = %.6f); masks bit-exact=%d; "
              "TrainConfig equal=%d",
              ckpt, png_err, 1.0 / 255.0, mask_ok, cfg_ok)};
}

Outcome cli_smoke() {
  const auto dir = testing::scratch_dir("acceptance_cli");
  const auto r = testing::run_cli_smoke(dir);
  std::ostringstream s;
  for (const auto& st : r.stages) s << st.name << "=" << st.exit_code << " (" << fmt("%.1f", st.seconds) << " s) ";
  s << fmt("total %.1f s", r.seconds);
  for (const auto& st : r.stages)
    if (st.exit_code != 0) s << "; " << st.name << ": " << st.err;
  fs::remove_all(dir);
  return {r.ok() && r.seconds < 600, s.str()};
}

}  // namespace

int main(int argc, char** argv) {
  Desk desk;
  desk.run_dir = DISENTANGLE_DESK_RUN;
  desk.config_path = DISENTANGLE_DESK_CONFIG;
  std::string only;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--run") desk.run_dir = argv[i + 1];
    else if (flag == "--config") desk.config_path = argv[i + 1];
    else if (flag == "--only") only = argv[i + 1];
    else {
      std::fprintf(stderr, "usage: %s [--run DIR] [--config FILE] [--only NAME]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient-suite", gradient_suite},
      {"matting-suite", matting_suite},
      {"closed-form", closed_forms},
      {"combinatorial-batch", combinatorial},
      {"desk-training-run", [&] { return desk_training(desk); }},
      {"eval-self-test", eval_self_test},
      {"inversion", [&] { return inversion_checks(desk); }},
      {"round-trips", round_trips},
      {"cli-smoke", cli_smoke},
  };
  int failed = 0, ran = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && only != name) continue;
    ++ran;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 && ran > 0 ? 0 : 1;
}
