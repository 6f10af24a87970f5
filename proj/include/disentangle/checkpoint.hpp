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

// Checkpoint layout: a JSON manifest
//
//   {"version": 1, "config": {...}, "step": N, "blob": "<name>.bin",
//    "tensors": [{"name": ..., "shape": [...], "offset": bytes, "bytes": n}, ...]}
//
// next to one blob of little-endian 32-bit floats.

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>

#include "disentangle/gan.hpp"
#include "disentangle/io.hpp"
#include "json.hpp"

namespace disentangle {

inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline void append_f32_le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffu));
}

inline float read_f32_le(const std::string& blob, std::size_t offset) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i)
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[offset + i])) << (8 * i);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

inline std::string config_hash(const GanConfig& config) {
  return sha256_hex(nlohmann::json(config).dump()).substr(0, 16);
}

template <typename T>
void save_checkpoint(const GanModel<T>& model, const std::filesystem::path& manifest_path) {
  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  auto emit = [&](const ParamSet<T>& set) {
    for (const auto& [name, t] : set) {
      const std::size_t offset = blob.size();
      for (T v : t.values()) detail::append_f32_le(blob, static_cast<float>(v));
      tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"bytes", blob.size() - offset}});
    }
  };
  emit(model.generator);
  emit(model.critic);
  emit(model.embedder);
  std::filesystem::path blob_path = manifest_path;
  blob_path.replace_extension(".bin");
  const nlohmann::json manifest = {{"version", kCheckpointVersion},
                                   {"config", model.config},
                                   {"step", model.step},
                                   {"blob", blob_path.filename().string()},
                                   {"tensors", tensors}};
  write_file_atomic(blob_path, blob);
  write_file_atomic(manifest_path, manifest.dump(2));
}

template <typename T>
GanModel<T> load_checkpoint(const std::filesystem::path& manifest_path) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  if (manifest.value("version", 0) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version in " + manifest_path.string());
  GanModel<T> model;
  model.config = manifest.at("config").get<GanConfig>();
  model.config.validate();
  model.step = manifest.value("step", std::int64_t{0});
  const std::string blob =
      read_file(manifest_path.parent_path() / manifest.at("blob").get<std::string>());
  for (const auto& entry : manifest.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto bytes = entry.at("bytes").get<std::size_t>();
    if (bytes != numel(shape) * 4 || offset + bytes > blob.size())
      throw IoError("checkpoint tensor '" + name + "' has an inconsistent extent");
    Tensor<T> t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(detail::read_f32_le(blob, offset + 4 * i));
    if (!t.all_finite()) throw IoError("checkpoint tensor '" + name + "' is not finite");
    if (name.starts_with("gen.")) model.generator.emplace(name, std::move(t));
    else if (name.starts_with("disc.")) model.critic.emplace(name, std::move(t));
    else if (name.starts_with("emb.")) model.embedder.emplace(name, std::move(t));
    else throw IoError("checkpoint tensor '" + name + "' belongs to no network");
  }
  // Layout check against a freshly initialized model of the same config.
  const auto reference = gan::init_model<T>(model.config);
  auto same_layout = [](const ParamSet<T>& a, const ParamSet<T>& b) {
    if (a.size() != b.size()) return false;
    for (const auto& [k, v] : a) {
      auto it = b.find(k);
      if (it == b.end() || it->second.shape() != v.shape()) return false;
    }
    return true;
  };
  if (!same_layout(model.generator, reference.generator) || !same_layout(model.critic, reference.critic) ||
      !same_layout(model.embedder, reference.embedder))
    throw IoError("checkpoint " + manifest_path.string() + " does not match its configured architecture");
  return model;
}

}  // namespace disentangle
