// Copyright 2026 The LWAM Authors. All rights reserved.
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
#include <vector>

#include "lwam/params.hpp"

namespace lwam {

struct AdamWOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // global gradient norm cap; 0 disables
};

// Moment buffers, one pair per trainable parameter in store order.
struct AdamWState {
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;
  bool operator==(const AdamWState&) const = default;
};

inline AdamWState init_adamw(const ParamStore<double>& ps) {
  AdamWState s;
  for (const auto& e : ps.entries()) {
    if (e.frozen) continue;
    s.m.emplace_back(e.tensor.size(), 0.0);
    s.v.emplace_back(e.tensor.size(), 0.0);
  }
  return s;
}

inline double global_grad_norm(const ParamStore<double>& ps) {
  double ss = 0.0;
  for (const auto& e : ps.entries()) {
    if (e.frozen || !e.tensor.has_grad()) continue;
    for (double g : e.tensor.grad()) ss += g * g;
  }
  return std::sqrt(ss);
}

// Decoupled-weight-decay Adam step over the trainable entries. Returns the
// gradient norm before clipping. Missing gradients count as zero.
inline double adamw_step(ParamStore<double>& ps, AdamWState& s, const AdamWOptions& o) {
  const double norm = global_grad_norm(ps);
  const double clip = (o.clip_norm > 0.0 && norm > o.clip_norm) ? o.clip_norm / norm : 1.0;
  s.t += 1;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(s.t));
  std::size_t k = 0;
  for (auto& e : ps.entries()) {
    if (e.frozen) continue;
    auto p = e.tensor.mutable_values();
    auto& m = s.m[k];
    auto& v = s.v[k];
    ++k;
    const bool has = e.tensor.has_grad();
    const auto g = e.tensor.grad();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = has ? g[i] * clip : 0.0;
      m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * gi;
      v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * gi * gi;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + o.eps) + o.weight_decay * p[i];
      p[i] -= o.lr * update;
    }
  }
  return norm;
}

}  // namespace lwam
