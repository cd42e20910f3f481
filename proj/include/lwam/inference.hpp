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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <variant>
#include <vector>

#include "lwam/checkpoint.hpp"
#include "lwam/model.hpp"
#include "lwam/synthworld.hpp"

namespace lwam {

// What the deployed policy sees for one example.
struct Observation {
  std::vector<std::size_t> instruction;  // [n_instr]
  std::vector<float> context_frames;     // [H x 3 x R x R], oldest first
  std::vector<float> state;              // [4]
};

// Euler integration of the prior-branch velocity field from a(0) = eps to
// a(1). `eps` holds [B*T x 2] starting noise; the result has the same shape
// and is in normalized action units.
template <typename T>
std::vector<T> integrate_flow(const WorldActionModel<T>& model, const std::vector<Observation>& obs,
                              std::vector<T> eps, std::uint32_t n_steps) {
  const RunConfig& c = model.config();
  const std::size_t B = obs.size(), TA = std::size_t{c.world.T} * kActionDim;
  if (n_steps == 0) throw std::invalid_argument("integrate_flow: n_steps must be >= 1");
  if (eps.size() != B * TA) throw DimensionError("integrate_flow: noise size does not match batch");
  const std::size_t cf = kChannels * c.world.context_res * c.world.context_res;
  ModelInputs<T> in;
  in.batch = B;
  std::vector<T> ctx, state;
  for (const auto& o : obs) {
    if (o.context_frames.size() != c.world.H * cf || o.state.size() != kStateDim ||
        o.instruction.size() != c.world.n_instr)
      throw DimensionError("integrate_flow: observation does not match the checkpoint dimensions");
    in.instruction.insert(in.instruction.end(), o.instruction.begin(), o.instruction.end());
    ctx.insert(ctx.end(), o.context_frames.begin(), o.context_frames.end());
    state.insert(state.end(), o.state.begin(), o.state.end());
  }
  in.context_frames = Tensor<T>::constant({B * c.world.H, cf}, std::move(ctx));
  in.state = Tensor<T>::constant({B, kStateDim}, std::move(state));
  const LayoutKind kind = inference_layout(parse_ablation(c.train.ablation));
  // Euler steps written through the running mean of the velocities seen so
  // far: after k steps a = eps + (k/n) * mean. A constant field keeps the
  // mean bitwise equal to its value, so the result is eps + u for any n.
  std::vector<T> a = eps, mean(eps.size(), T{0});
  for (std::uint32_t k = 0; k < n_steps; ++k) {
    in.noised_actions = Tensor<T>::constant({B * c.world.T, kActionDim}, a);
    in.flow_time.assign(B, static_cast<T>(k) / static_cast<T>(n_steps));
    const auto out = model.forward(in, kind);
    const auto v = out.backbone.velocity_prior.values();
    const T frac = static_cast<T>(k + 1) / static_cast<T>(n_steps);
    for (std::size_t i = 0; i < a.size(); ++i) {
      mean[i] += (v[i] - mean[i]) / static_cast<T>(k + 1);
      a[i] = k + 1 == n_steps ? eps[i] + mean[i] : eps[i] + frac * mean[i];
    }
  }
  return a;
}

// Deployable prior-branch policy loaded from a checkpoint, in f32 or f64.
class Policy {
 public:
  Policy(const Checkpoint& ck, const std::string& dtype) : cfg_(ck.config) {
    WorldActionModel<double> m(ck.config, ck.params.clone());
    if (dtype == "f32") model_ = m.cast<float>();
    else if (dtype == "f64") model_ = std::move(m);
    else throw ConfigError("sampler.dtype", "must be f32 or f64");
  }

  const RunConfig& config() const { return cfg_; }
  std::size_t chunk_length() const { return cfg_.world.T; }

  // Action chunks in world units, one [T] list per observation. Starting
  // noise is drawn from `seed`.
  std::vector<std::vector<Action>> sample_actions(const std::vector<Observation>& obs, std::uint64_t seed,
                                                  std::uint32_t n_steps) const {
    const std::size_t TA = std::size_t{cfg_.world.T} * kActionDim;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> eps(obs.size() * TA);
    for (auto& x : eps) x = g(rng);
    std::vector<double> a = std::visit(
        [&](const auto& m) {
          using T = typename std::decay_t<decltype(m)>::value_type;
          auto r = integrate_flow<T>(m, obs, std::vector<T>(eps.begin(), eps.end()), n_steps);
          return std::vector<double>(r.begin(), r.end());
        },
        model_);
    std::vector<std::vector<Action>> out(obs.size(), std::vector<Action>(cfg_.world.T));
    for (std::size_t b = 0; b < obs.size(); ++b)
      for (std::size_t i = 0; i < cfg_.world.T; ++i) {
        const std::size_t o = (b * cfg_.world.T + i) * kActionDim;
        out[b][i] = clamp_action({a[o] * cfg_.world.a_max, a[o + 1] * cfg_.world.a_max}, cfg_.world.a_max);
      }
    return out;
  }

 private:
  RunConfig cfg_;
  std::variant<WorldActionModel<double>, WorldActionModel<float>> model_;
};

struct LatencyReport {
  std::size_t n = 0;
  double mean_ms = 0.0;
  double p99_ms = 0.0;
};

// Wall-clock timing of single-observation sample_actions calls.
inline LatencyReport latency_probe(const Policy& policy, const Observation& obs, std::size_t n_repeats,
                                   std::uint32_t n_steps) {
  LatencyReport r;
  if (n_repeats == 0) return r;
  std::vector<double> ms;
  for (std::size_t i = 0; i < n_repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)policy.sample_actions({obs}, i, n_steps);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  r.n = ms.size();
  for (double x : ms) r.mean_ms += x;
  r.mean_ms /= static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const std::size_t k = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(ms.size()))) - 1;
  r.p99_ms = ms[std::min(k, ms.size() - 1)];
  return r;
}

}  // namespace lwam
