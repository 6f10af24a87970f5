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

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "disentangle/graph.hpp"
#include "disentangle/tensor.hpp"
#include "json.hpp"

namespace disentangle {

template <typename T>
using ParamSet = std::map<std::string, Tensor<T>>;

struct AdamHyper {
  double lr = 0.001;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

inline void to_json(nlohmann::json& j, const AdamHyper& h) {
  j = {{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"eps", h.eps}};
}

inline void from_json(const nlohmann::json& j, AdamHyper& h) {
  const AdamHyper d;
  h.lr = j.value("lr", d.lr);
  h.beta1 = j.value("beta1", d.beta1);
  h.beta2 = j.value("beta2", d.beta2);
  h.eps = j.value("eps", d.eps);
}

template <typename T>
struct AdamState {
  ParamSet<T> first_moment;
  ParamSet<T> second_moment;
  std::int64_t step = 0;
};

/// One bias-corrected ADAM update of every parameter that has a gradient.
/// Parameters without an entry in `grads` are left untouched.
template <typename T>
void adam_step(ParamSet<T>& params, const NamedTensors<T>& grads, AdamState<T>& state,
               const AdamHyper& hyper) {
  if (!(hyper.lr > 0)) throw std::invalid_argument("adam: learning rate must be positive");
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("adam: gradient for unknown parameter '" + name + "'");
    if (it->second.shape() != g.shape())
      throw std::invalid_argument("adam: gradient shape " + shape_str(g.shape()) +
                                  " does not match parameter '" + name + "' " +
                                  shape_str(it->second.shape()));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(hyper.beta1), b2 = static_cast<T>(hyper.beta2);
  for (const auto& [name, g] : grads) {
    Tensor<T>& p = params.at(name);
    auto [mit, m_new] = state.first_moment.try_emplace(name, g.shape());
    auto [vit, v_new] = state.second_moment.try_emplace(name, g.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    if (m.shape() != g.shape() || v.shape() != g.shape())
      throw std::invalid_argument("adam: accumulator shape mismatch for '" + name + "'");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / c1;
      const double vhat = static_cast<double>(v[i]) / c2;
      p[i] -= static_cast<T>(hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

}  // namespace disentangle
