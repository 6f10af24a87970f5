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

// HTTP/JSON API over a loaded model.
//
//   GET  /health                 {"status": "ok"}
//   GET  /model/info             {"image_size", "d_t", "d_e", "step", "config_hash"}
//   POST /masks                  PNG body, or JSON {"png": base64} -> {"mask_id"}
//   GET  /masks/{id}             image/png
//   POST /generate               GenerateRequest -> GenerateResponse
//   POST /invert                 PNG body, or JSON {"image": base64, "steps"?} -> 202 {"job_id"}
//   GET  /jobs/{id}              {"job_id", "state", "progress", "error"?, "result"?}
//
// Errors are JSON {"error": message, "field": JSON pointer or ""}.

#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "disentangle/checkpoint.hpp"
#include "disentangle/gan.hpp"
#include "disentangle/image.hpp"
#include "disentangle/inversion.hpp"
#include "disentangle/io.hpp"
#include "disentangle/png.hpp"
#include "disentangle/synthdata.hpp"
#include "httplib.h"
#include "json.hpp"

namespace disentangle::service {

using json = nlohmann::json;
using Model = GanModel<float>;

/// Client error carrying an HTTP status and the offending field.
struct RequestError : std::runtime_error {
  int status;
  std::string field;
  RequestError(int status, std::string field, const std::string& message)
      : std::runtime_error(message), status(status), field(std::move(field)) {}
};

inline RequestError bad_request(std::string field, const std::string& message) {
  return RequestError(400, std::move(field), message);
}

inline std::string mask_id(const Mask& m) {
  std::string bytes = std::to_string(m.height) + "x" + std::to_string(m.width) + ":";
  bytes.append(m.data.begin(), m.data.end());
  return sha256_hex(bytes).substr(0, 16);
}

/// Seed-derived texture draw, shared with the command line.
inline std::vector<double> texture_from_seed(std::uint64_t seed, int dim) {
  std::mt19937_64 rng(seed);
  return synth::sample_texture(rng, dim);
}

struct ServiceOptions {
  inversion::InversionConfig inversion;
  std::size_t max_queue = 16;
  int max_steps = 5000;
};

enum class JobState { kQueued, kRunning, kDone, kFailed };

NLOHMANN_JSON_SERIALIZE_ENUM(JobState, {{JobState::kQueued, "queued"},
                                        {JobState::kRunning, "running"},
                                        {JobState::kDone, "done"},
                                        {JobState::kFailed, "failed"}})

struct Job {
  std::string id;
  Image image;
  int steps = 0;
  JobState state = JobState::kQueued;
  int progress = 0;
  std::string error;
  json result;
};

class Service {
 public:
  Service(Model model, ServiceOptions options = {})
      : model_(std::make_shared<const Model>(std::move(model))), options_(std::move(options)) {
    options_.inversion.validate();
    worker_ = std::thread([this] { work(); });
  }

  ~Service() {
    {
      std::lock_guard lock(jobs_mutex_);
      stopping_ = true;
    }
    jobs_cv_.notify_all();
    if (worker_.joinable()) worker_.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  const Model& model() const { return *model_; }

  void install(httplib::Server& server) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    server.Get("/health", wrap([](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"status", "ok"}});
    }));
    server.Get("/model/info", wrap([this](const httplib::Request&, httplib::Response& res) { reply(res, 200, info()); }));
    server.Post("/masks", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const Mask m = mask_from_upload(req);
      reply(res, 200, {{"mask_id", store_mask(m)}});
    }));
    server.Get(R"(/masks/([0-9A-Za-z]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      const Mask m = find_mask(req.matches[1]);
      res.status = 200;
      res.set_content(png::encode_mask(m), "image/png");
    }));
    server.Post("/generate", wrap([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, generate(parse_body(req)));
    }));
    server.Post("/invert", wrap([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 202, {{"job_id", submit(req)}});
    }));
    server.Get(R"(/jobs/([0-9A-Za-z]+))", wrap([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, job_status(req.matches[1]));
    }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply(res, res.status, {{"error", httplib::status_message(res.status)}, {"field", ""}});
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      reply(res, 500, {{"error", "internal error"}, {"field", ""}});
    });
  }

  json info() const {
    const auto& c = model_->config;
    return {{"image_size", c.image_size},
            {"d_t", c.texture_dim},
            {"d_e", c.embed_dim},
            {"step", model_->step},
            {"config_hash", config_hash(c)}};
  }

  std::string store_mask(const Mask& m) {
    const std::string id = mask_id(m);
    std::lock_guard lock(masks_mutex_);
    masks_.emplace(id, m);
    return id;
  }

  Mask find_mask(const std::string& id) const {
    std::lock_guard lock(masks_mutex_);
    auto it = masks_.find(id);
    if (it == masks_.end()) throw RequestError(404, "", "unknown mask id '" + id + "'");
    return it->second;
  }

  json generate(const json& body) {
    if (!body.is_object()) throw bad_request("", "request body must be a JSON object");
    const auto& c = model_->config;
    AttributeTriple t;
    t.color = parse_color(body, "/color");
    t.texture = parse_texture(body, c.texture_dim);
    std::string id;
    std::tie(t.mask, id) = parse_mask(body);
    const Image x = gan::generate(*model_, t);
    Color achieved = synth::masked_mean(x, t.mask);
    for (double& v : achieved) v = std::clamp(v, -1.0, 1.0);
    return {{"image", base64_encode(png::encode_image(x))},
            {"achieved_avg_color", achieved},
            {"texture_used", t.texture},
            {"mask_id", id}};
  }

  std::string submit(const httplib::Request& req) {
    int steps = options_.inversion.steps;
    Image image;
    if (is_json(req)) {
      const json body = parse_body(req);
      if (!body.is_object() || !body.contains("image") || !body["image"].is_string())
        throw bad_request("/image", "expected a base64 PNG string");
      image = decode_image(body["image"].get<std::string>(), "/image");
      if (body.contains("steps")) {
        if (!body["steps"].is_number_integer()) throw bad_request("/steps", "expected an integer");
        steps = body["steps"].get<int>();
        if (steps < 1 || steps > options_.max_steps)
          throw bad_request("/steps", "must be between 1 and " + std::to_string(options_.max_steps));
      }
    } else {
      image = decode_image_bytes(req.body, "");
    }
    const int size = model_->config.image_size;
    if (image.height != size || image.width != size)
      throw bad_request(is_json(req) ? "/image" : "", "image is " + std::to_string(image.height) + "x" +
                                                          std::to_string(image.width) + ", model expects " +
                                                          std::to_string(size));
    std::lock_guard lock(jobs_mutex_);
    if (queue_.size() >= options_.max_queue) throw RequestError(429, "", "inversion queue is full");
    auto job = std::make_shared<Job>();
    job->id = "j" + std::to_string(++job_counter_);
    job->image = std::move(image);
    job->steps = steps;
    jobs_[job->id] = job;
    queue_.push_back(job);
    jobs_cv_.notify_one();
    return job->id;
  }

  json job_status(const std::string& id) const {
    std::lock_guard lock(jobs_mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw RequestError(404, "", "unknown job id '" + id + "'");
    const Job& j = *it->second;
    json out = {{"job_id", j.id}, {"state", j.state}, {"progress", j.progress}, {"steps", j.steps}};
    if (j.state == JobState::kFailed) out["error"] = j.error;
    if (j.state == JobState::kDone) out["result"] = j.result;
    return out;
  }

  /// Blocks until no job is queued or running.
  void drain() {
    std::unique_lock lock(jobs_mutex_);
    idle_cv_.wait(lock, [this] { return queue_.empty() && !busy_; });
  }

 private:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const RequestError& e) {
        reply(res, e.status, {{"error", e.what()}, {"field", e.field}});
      } catch (const json::exception& e) {
        reply(res, 400, {{"error", std::string("malformed request: ") + e.what()}, {"field", ""}});
      } catch (const std::invalid_argument& e) {
        reply(res, 400, {{"error", e.what()}, {"field", ""}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}, {"field", ""}});
      }
    };
  }

  static bool is_json(const httplib::Request& req) {
    return req.get_header_value("Content-Type").starts_with("application/json");
  }

  static json parse_body(const httplib::Request& req) {
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw bad_request("", std::string("invalid JSON: ") + e.what());
    }
  }

  static Image decode_image_bytes(const std::string& bytes, const std::string& field) {
    try {
      return png::decode_image(bytes);
    } catch (const IoError& e) {
      throw bad_request(field, e.what());
    }
  }

  static Image decode_image(const std::string& b64, const std::string& field) {
    try {
      return decode_image_bytes(base64_decode(b64), field);
    } catch (const IoError& e) {
      throw bad_request(field, e.what());
    }
  }

  Mask decode_mask(const std::string& bytes, const std::string& field) const {
    Mask m;
    try {
      m = png::decode_mask(bytes);
    } catch (const IoError& e) {
      throw bad_request(field, e.what());
    }
    const int size = model_->config.image_size;
    if (m.height != size || m.width != size)
      throw bad_request(field, "mask is " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                                   ", model expects " + std::to_string(size));
    if (m.count() == 0) throw bad_request(field, "mask is empty");
    return m;
  }

  Mask mask_from_upload(const httplib::Request& req) const {
    if (!is_json(req)) return decode_mask(req.body, "");
    const json body = parse_body(req);
    if (!body.is_object() || !body.contains("png") || !body["png"].is_string())
      throw bad_request("/png", "expected a base64 PNG string");
    try {
      return decode_mask(base64_decode(body["png"].get<std::string>()), "/png");
    } catch (const IoError& e) {
      throw bad_request("/png", e.what());
    }
  }

  static Color parse_color(const json& body, const std::string& field) {
    const json* v = body.contains("color") ? &body["color"] : nullptr;
    if (!v) throw bad_request(field, "color is required");
    if (v->is_string()) {
      try {
        return parse_hex_color(v->get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw bad_request(field, e.what());
      }
    }
    if (!v->is_array() || v->size() != 3) throw bad_request(field, "expected 3 numbers or a #rrggbb string");
    Color c;
    for (int i = 0; i < 3; ++i) {
      const json& e = (*v)[static_cast<std::size_t>(i)];
      const std::string path = field + "/" + std::to_string(i);
      if (!e.is_number()) throw bad_request(path, "expected a number");
      c[i] = e.get<double>();
      if (!(c[i] >= -1.0 && c[i] <= 1.0)) throw bad_request(path, "must lie in [-1, 1]");
    }
    return c;
  }

  static std::vector<double> parse_vector(const json& v, int dim, const std::string& field) {
    if (!v.is_array() || static_cast<int>(v.size()) != dim)
      throw bad_request(field, "expected an array of " + std::to_string(dim) + " numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) throw bad_request(field + "/" + std::to_string(i), "expected a number");
      const double x = v[i].get<double>();
      if (!std::isfinite(x)) throw bad_request(field + "/" + std::to_string(i), "must be finite");
      out.push_back(x);
    }
    return out;
  }

  static std::uint64_t parse_seed(const json& v, const std::string& field) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw bad_request(field, "expected an integer seed");
  }

  /// Array or {"seed": n}.
  static std::vector<double> parse_anchor(const json& v, int dim, const std::string& field) {
    if (v.is_array()) return parse_vector(v, dim, field);
    if (v.is_object() && v.contains("seed")) return texture_from_seed(parse_seed(v["seed"], field + "/seed"), dim);
    throw bad_request(field, "expected a texture array or {\"seed\": n}");
  }

  static std::vector<double> parse_texture(const json& body, int dim) {
    if (!body.contains("texture")) throw bad_request("/texture", "texture is required");
    const json& v = body["texture"];
    if (v.is_array()) return parse_vector(v, dim, "/texture");
    if (!v.is_object()) throw bad_request("/texture", "expected an array, {\"seed\": n} or {\"interpolate\": [a, b, alpha]}");
    if (v.contains("seed")) return texture_from_seed(parse_seed(v["seed"], "/texture/seed"), dim);
    if (v.contains("interpolate")) {
      const json& it = v["interpolate"];
      if (!it.is_array() || it.size() != 3) throw bad_request("/texture/interpolate", "expected [t_a, t_b, alpha]");
      const auto a = parse_anchor(it[0], dim, "/texture/interpolate/0");
      const auto b = parse_anchor(it[1], dim, "/texture/interpolate/1");
      if (!it[2].is_number()) throw bad_request("/texture/interpolate/2", "expected a number");
      const double alpha = it[2].get<double>();
      if (!std::isfinite(alpha)) throw bad_request("/texture/interpolate/2", "must be finite");
      std::vector<double> out(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = (1.0 - alpha) * a[i] + alpha * b[i];
      return out;
    }
    throw bad_request("/texture", "expected an array, {\"seed\": n} or {\"interpolate\": [a, b, alpha]}");
  }

  static bool looks_like_id(const std::string& s) {
    return s.size() == 16 && std::all_of(s.begin(), s.end(), [](char c) {
             return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
           });
  }

  std::pair<Mask, std::string> parse_mask(const json& body) {
    std::string field = "/mask_id";
    const json* v = nullptr;
    if (body.contains("mask_id")) {
      v = &body["mask_id"];
    } else if (body.contains("mask")) {
      v = &body["mask"];
      field = "/mask";
    }
    if (!v) throw bad_request("/mask", "mask or mask_id is required");
    if (!v->is_string()) throw bad_request(field, "expected a string");
    const auto s = v->get<std::string>();
    if (field == "/mask_id" || looks_like_id(s)) return {find_mask(s), s};
    Mask m;
    try {
      m = decode_mask(base64_decode(s), field);
    } catch (const IoError& e) {
      throw bad_request(field, e.what());
    }
    return {m, store_mask(m)};
  }

  void work() {
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock lock(jobs_mutex_);
        jobs_cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        job = queue_.front();
        queue_.pop_front();
        job->state = JobState::kRunning;
        busy_ = true;
      }
      run(*job);
      {
        std::lock_guard lock(jobs_mutex_);
        busy_ = false;
      }
      idle_cv_.notify_all();
    }
  }

  void run(Job& job) {
    inversion::InversionConfig cfg = options_.inversion;
    cfg.steps = job.steps;
    try {
      const auto r = inversion::invert(*model_, job.image, cfg, [&](const inversion::TraceEntry& e) {
        std::lock_guard lock(jobs_mutex_);
        if (stopping_) throw std::runtime_error("service stopping");
        job.progress = e.step;
      });
      const std::string id = store_mask(r.estimate.mask);
      json trace = json::array();
      for (const auto& e : r.trace) trace.push_back(e.terms.objective);
      json result = {{"color", r.estimate.color},
                     {"texture", r.estimate.texture},
                     {"mask_id", id},
                     {"mask", base64_encode(png::encode_mask(r.estimate.mask))},
                     {"reconstruction", base64_encode(png::encode_image(r.reconstruction))},
                     {"best_step", r.best_step},
                     {"final", r.final_terms},
                     {"trace_summary",
                      {{"steps", static_cast<int>(r.trace.size()) - 1},
                       {"initial_objective", r.trace.front().terms.objective},
                       {"best_objective", r.final_terms.objective},
                       {"initial_l1", r.trace.front().terms.l1},
                       {"best_l1", r.final_terms.l1}}},
                     {"objective_trace", trace}};
      std::lock_guard lock(jobs_mutex_);
      job.result = std::move(result);
      job.state = JobState::kDone;
    } catch (const std::exception& e) {
      std::lock_guard lock(jobs_mutex_);
      job.error = e.what();
      job.state = JobState::kFailed;
    }
  }

  std::shared_ptr<const Model> model_;
  ServiceOptions options_;

  mutable std::mutex masks_mutex_;
  std::map<std::string, Mask> masks_;

  mutable std::mutex jobs_mutex_;
  std::condition_variable jobs_cv_, idle_cv_;
  std::map<std::string, std::shared_ptr<Job>> jobs_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::uint64_t job_counter_ = 0;
  bool busy_ = false;
  bool stopping_ = false;
  std::thread worker_;
};

/// Installs the routes and blocks in listen(host, port).
inline bool serve(Service& service, const std::string& host, int port) {
  httplib::Server server;
  service.install(server);
  return server.listen(host, port);
}

}  // namespace disentangle::service
