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
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "lwam/inference.hpp"
#include "lwam/synthworld.hpp"

namespace lwam {

// A chunked controller: given observations (and, for oracle baselines only,
// the true world states) returns one action chunk per episode.
using ChunkPolicy = std::function<std::vector<std::vector<Action>>(
    const std::vector<Observation>& obs, const std::vector<WorldState>& truth, std::uint64_t call_seed)>;

struct EvalResult {
  std::size_t n_episodes = 0;
  double success_rate = 0.0;          // fraction of episodes with an interception
  double mean_intercept_error = 0.0;  // mean over episodes of the closest approach
  std::optional<double> mean_fm_val;
};

inline json to_json(const EvalResult& r) {
  json j;
  j["n_episodes"] = r.n_episodes;
  j["success_rate"] = r.success_rate;
  j["mean_intercept_error"] = r.mean_intercept_error;
  j["mean_fm_val"] = r.mean_fm_val ? json(*r.mean_fm_val) : json(nullptr);
  return j;
}

inline Observation observe(const std::vector<std::vector<float>>& history, const WorldState& s, const WorldConfig& w) {
  Observation o;
  for (auto t : instruction_tokens(s.goal_id, w)) o.instruction.push_back(t);
  if (history.empty()) throw std::invalid_argument("observe: empty frame history");
  // Short histories repeat their oldest frame.
  const std::size_t H = w.H, n = history.size();
  for (std::size_t h = 0; h < H; ++h) {
    const auto& f = history[h + n >= H ? h + n - H : 0];
    o.context_frames.insert(o.context_frames.end(), f.begin(), f.end());
  }
  o.state = {float(s.agent[0]), float(s.agent[1]), float(s.object[0]), float(s.object[1])};
  return o;
}

// Lockstep closed-loop rollouts. Every episode replans every `execute_steps`
// steps; the context history is padded with the initial frame.
inline EvalResult evaluate(const ChunkPolicy& policy, const WorldConfig& w, std::size_t n_episodes, std::uint64_t seed,
                           std::uint32_t execute_steps) {
  EvalResult r;
  r.n_episodes = n_episodes;
  if (n_episodes == 0) return r;
  std::mt19937_64 rng(seed);
  std::vector<WorldState> states(n_episodes);
  for (auto& s : states) s = sample_initial_state(rng, w);
  std::vector<std::vector<std::vector<float>>> history(n_episodes);
  std::vector<double> closest(n_episodes, std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < n_episodes; ++e) {
    history[e].assign(w.H, render(states[e], w.context_res, w));
    closest[e] = distance(states[e]);
  }
  std::uint64_t call = 0;
  for (std::uint32_t t = 0; t + 1 < w.episode_len;) {
    std::vector<Observation> obs;
    for (std::size_t e = 0; e < n_episodes; ++e) obs.push_back(observe(history[e], states[e], w));
    const auto chunks = policy(obs, states, seed ^ (0x9E3779B97F4A7C15ull * ++call));
    const std::uint32_t n_exec = std::min<std::uint32_t>(execute_steps, w.episode_len - 1 - t);
    for (std::uint32_t k = 0; k < n_exec; ++k) {
      for (std::size_t e = 0; e < n_episodes; ++e) {
        states[e] = step(states[e], chunks[e].at(k), w);
        closest[e] = std::min(closest[e], distance(states[e]));
        history[e].erase(history[e].begin());
        history[e].push_back(render(states[e], w.context_res, w));
      }
    }
    t += n_exec;
  }
  std::size_t hits = 0;
  double err = 0.0;
  for (double c : closest) {
    hits += c < w.capture_radius ? 1 : 0;
    err += c;
  }
  r.success_rate = static_cast<double>(hits) / static_cast<double>(n_episodes);
  r.mean_intercept_error = err / static_cast<double>(n_episodes);
  return r;
}

// Oracle baseline: the expert planned over the true state for a whole chunk.
inline ChunkPolicy expert_policy(const WorldConfig& w) {
  return [w](const std::vector<Observation>& obs, const std::vector<WorldState>& truth, std::uint64_t) {
    std::vector<std::vector<Action>> out(obs.size());
    for (std::size_t e = 0; e < obs.size(); ++e) {
      WorldState s = truth[e];
      for (std::uint32_t i = 0; i < w.T; ++i) {
        const Action a = expert_action(s, w);
        out[e].push_back(a);
        s = step(s, a, w);
      }
    }
    return out;
  };
}

// Gaussian normalized actions scaled by a_max and clamped.
inline ChunkPolicy random_policy(const WorldConfig& w) {
  return [w](const std::vector<Observation>& obs, const std::vector<WorldState>&, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<std::vector<Action>> out(obs.size());
    for (auto& chunk : out)
      for (std::uint32_t i = 0; i < w.T; ++i) {
        const double x = g(rng), y = g(rng);
        chunk.push_back(clamp_action({x * w.a_max, y * w.a_max}, w.a_max));
      }
    return out;
  };
}

// Learned prior-branch policy; the true states are ignored.
inline ChunkPolicy model_policy(const Policy& p, std::uint32_t n_steps) {
  return [&p, n_steps](const std::vector<Observation>& obs, const std::vector<WorldState>&, std::uint64_t seed) {
    return p.sample_actions(obs, seed, n_steps);
  };
}

// Environment settings the checkpoint's input layout depends on.
inline void check_env_matches(const WorldConfig& env, const RunConfig& trained) {
  const auto& w = trained.world;
  if (env.H != w.H || env.T != w.T || env.n_instr != w.n_instr || env.context_res != w.context_res)
    throw ConfigError("world", "environment dimensions do not match the checkpoint (H, T, n_instr, context_res)");
}

}  // namespace lwam
