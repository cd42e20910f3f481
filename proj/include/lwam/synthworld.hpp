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
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "lwam/config.hpp"

namespace lwam {

// Point-kinematics interception world on the unit square. The agent moves by
// a clamped displacement per step; the object drifts with constant speed and
// reflects elastically at the walls.
struct WorldState {
  std::array<double, 2> agent{0.0, 0.0};
  std::array<double, 2> object{0.0, 0.0};
  std::array<double, 2> velocity{0.0, 0.0};
  std::uint32_t goal_id = 0;
  std::uint32_t step = 0;
  bool operator==(const WorldState&) const = default;
};

using Action = std::array<double, 2>;

inline Action clamp_action(const Action& a, double a_max) {
  return {std::clamp(a[0], -a_max, a_max), std::clamp(a[1], -a_max, a_max)};
}

namespace detail {

// One step of wall-reflected motion along one axis.
inline void reflect_step(double& x, double& v) {
  x += v;
  if (x > 1.0) {
    x = 2.0 - x;
    v = -v;
  } else if (x < 0.0) {
    x = -x;
    v = -v;
  }
}

}  // namespace detail

inline WorldState step(const WorldState& s, const Action& action, const WorldConfig& w) {
  WorldState n = s;
  const Action a = clamp_action(action, w.a_max);
  for (int i = 0; i < 2; ++i) {
    n.agent[i] = std::clamp(s.agent[i] + a[i], 0.0, 1.0);
    detail::reflect_step(n.object[i], n.velocity[i]);
  }
  n.step = s.step + 1;
  return n;
}

// Object position k steps ahead, reflections included.
inline std::array<double, 2> predict_object(const WorldState& s, std::uint32_t k) {
  std::array<double, 2> p = s.object, v = s.velocity;
  for (std::uint32_t i = 0; i < k; ++i)
    for (int a = 0; a < 2; ++a) detail::reflect_step(p[a], v[a]);
  return p;
}

inline constexpr std::uint32_t kInterceptHorizon = 200;

// Earliest k in [0, horizon] at which an agent moving at a_max per axis can
// stand on the predicted object position; horizon if none.
inline std::uint32_t intercept_step(const WorldState& s, double a_max, std::uint32_t horizon = kInterceptHorizon) {
  std::array<double, 2> p = s.object, v = s.velocity;
  for (std::uint32_t k = 0; k <= horizon; ++k) {
    const double cheb = std::max(std::abs(p[0] - s.agent[0]), std::abs(p[1] - s.agent[1]));
    if (cheb <= static_cast<double>(k) * a_max + 1e-12) return k;
    for (int a = 0; a < 2; ++a) detail::reflect_step(p[a], v[a]);
  }
  return horizon;
}

// Heads straight for the predicted intercept point, scaled so that neither
// axis exceeds a_max.
inline Action expert_action(const WorldState& s, const WorldConfig& w) {
  const auto target = predict_object(s, intercept_step(s, w.a_max));
  Action d{target[0] - s.agent[0], target[1] - s.agent[1]};
  const double cheb = std::max(std::abs(d[0]), std::abs(d[1]));
  if (cheb > w.a_max) {
    const double f = w.a_max / cheb;
    d = {d[0] * f, d[1] * f};
  }
  return clamp_action(d, w.a_max);
}

inline double distance(const WorldState& s) { return std::hypot(s.agent[0] - s.object[0], s.agent[1] - s.object[1]); }
inline bool intercepted(const WorldState& s, const WorldConfig& w) { return distance(s) < w.capture_radius; }

// Frame [3 x res x res]: agent blob, object blob, goal plate.
inline std::vector<float> render(const WorldState& s, std::uint32_t res, const WorldConfig& w) {
  std::vector<float> f(3 * res * res, 0.0f);
  const double inv2s2 = 1.0 / (2.0 * w.blob_sigma * w.blob_sigma);
  const double scale = static_cast<double>(res);
  auto blob = [&](std::size_t ch, const std::array<double, 2>& p) {
    const double cx = p[0] * scale, cy = p[1] * scale;
    for (std::uint32_t r = 0; r < res; ++r)
      for (std::uint32_t c = 0; c < res; ++c) {
        const double dx = c - cx, dy = r - cy;
        f[(ch * res + r) * res + c] = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv2s2));
      }
  };
  blob(0, s.agent);
  blob(1, s.object);
  const std::uint32_t cell = std::max<std::uint32_t>(1, res / 4);
  const float level = 0.25f * static_cast<float>(1 + s.goal_id);
  for (std::uint32_t r = 0; r < res; ++r)
    for (std::uint32_t c = 0; c < res; ++c)
      if ((r / cell + c / cell + s.goal_id) % 2 == 0) f[(2 * res + r) * res + c] = level;
  return f;
}

// Instruction: a task token followed by the goal token, padded.
inline std::vector<std::uint32_t> instruction_tokens(std::uint32_t goal_id, const WorldConfig& w) {
  std::vector<std::uint32_t> t(w.n_instr, 1 + w.n_goals);
  t[0] = 0;
  if (w.n_instr > 1) t[1] = 1 + goal_id;
  return t;
}

// Seeded start: both points in [0.1, 0.9]^2 at least min_start_dist apart,
// object speed in [v_max/2, v_max] with a uniform heading.
inline WorldState sample_initial_state(std::mt19937_64& rng, const WorldConfig& w) {
  std::uniform_real_distribution<double> pos(0.1, 0.9), speed(0.5 * w.v_max, w.v_max),
      heading(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<std::uint32_t> goal(0, w.n_goals - 1);
  WorldState s;
  do {
    s.agent = {pos(rng), pos(rng)};
    s.object = {pos(rng), pos(rng)};
  } while (distance(s) < w.min_start_dist);
  const double v = speed(rng), th = heading(rng);
  s.velocity = {v * std::cos(th), v * std::sin(th)};
  s.goal_id = goal(rng);
  return s;
}

// A rolled-out expert episode: states[0..E-1], actions[0..E-2].
struct Episode {
  std::vector<WorldState> states;
  std::vector<Action> actions;
};

inline Episode rollout_expert(const WorldState& start, const WorldConfig& w) {
  Episode e;
  e.states.push_back(start);
  for (std::uint32_t i = 1; i < w.episode_len; ++i) {
    const Action a = expert_action(e.states.back(), w);
    e.actions.push_back(a);
    e.states.push_back(step(e.states.back(), a, w));
  }
  return e;
}

}  // namespace lwam
