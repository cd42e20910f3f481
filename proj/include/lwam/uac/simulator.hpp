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
#include <cmath>
#include <cstdint>
#include <functional>
#include <queue>
#include <random>
#include <vector>

#include "lwam/uac/buffer.hpp"

namespace lwam::uac {

// Round-trip latency: log-normal around `median_ms`, optionally capped, plus
// a fixed server compute time. sigma = 0 gives a deterministic latency.
struct LatencyModel {
  double median_ms = 80.0;
  double sigma = 0.4;
  double cap_ms = 0.0;  // 0 disables the cap
  double server_compute_ms = 0.0;

  double sample(std::mt19937_64& rng) const {
    std::normal_distribution<double> z(0.0, 1.0);
    double l = sigma > 0.0 ? median_ms * std::exp(sigma * z(rng)) : median_ms;
    if (cap_ms > 0.0) l = std::min(l, cap_ms);
    return l + server_compute_ms;
  }

  static LatencyModel from(const UacConfig& u) {
    return {u.latency_median_ms, u.latency_sigma, u.latency_cap_ms, u.server_compute_ms};
  }
};

// Produces the chunk answering a request.
using ChunkBackend = std::function<std::vector<Action>(const PendingRequest&)>;

// Scripted chunks that name their own provenance: action i of the chunk for
// request r is (t_req + i, r).
inline ChunkBackend scripted_backend(std::uint32_t T) {
  return [T](const PendingRequest& p) {
    std::vector<Action> a(T);
    for (std::uint32_t i = 0; i < T; ++i)
      a[i] = {static_cast<double>(p.t_req + i), static_cast<double>(p.request_id)};
    return a;
  };
}

struct UacReport {
  std::uint64_t n_steps = 0;
  std::size_t tick_count = 0;
  std::size_t underflow_count = 0;
  std::size_t prefix_violation_count = 0;
  std::size_t trigger_count = 0;
  std::size_t expired_count = 0;
  std::size_t stale_count = 0;
  std::size_t max_in_flight = 0;
  bool cadence_ok = true;         // one tick per period, on the period grid
  bool monotone_stitching = true;  // per-step chunk ids never decrease
  double occupancy_mean = 0.0;     // scheduled steps ahead of the cursor, sampled before each tick
  double occupancy_p50 = 0.0, occupancy_p95 = 0.0, occupancy_p99 = 0.0;
  double occupancy_min = 0.0, occupancy_max = 0.0;
  double mean_rtt_ms = 0.0;
  std::vector<Action> action_trace;
  std::vector<std::int64_t> occupancy_trace;
};

inline json to_json(const UacReport& r, bool with_traces = true) {
  json j;
  j["n_steps"] = r.n_steps;
  j["tick_count"] = r.tick_count;
  j["underflow_count"] = r.underflow_count;
  j["prefix_violation_count"] = r.prefix_violation_count;
  j["trigger_count"] = r.trigger_count;
  j["expired_count"] = r.expired_count;
  j["stale_count"] = r.stale_count;
  j["max_in_flight"] = r.max_in_flight;
  j["cadence_ok"] = r.cadence_ok;
  j["monotone_stitching"] = r.monotone_stitching;
  j["occupancy"] = {{"mean", r.occupancy_mean}, {"p50", r.occupancy_p50}, {"p95", r.occupancy_p95},
                    {"p99", r.occupancy_p99}, {"min", r.occupancy_min}, {"max", r.occupancy_max}};
  j["mean_rtt_ms"] = r.mean_rtt_ms;
  if (with_traces) {
    json trace = json::array();
    for (const auto& a : r.action_trace) trace.push_back({a[0], a[1]});
    j["action_trace"] = std::move(trace);
    j["occupancy_trace"] = r.occupancy_trace;
  }
  return j;
}

inline double nearest_rank(std::vector<std::int64_t> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return static_cast<double>(v[std::clamp<std::size_t>(k, 1, v.size()) - 1]);
}

// Event-driven virtual-clock run of the client protocol. The control clock
// starts when the bootstrap chunk (requested at step 0) has arrived; after
// that, ticks fall every control period and responses arrive after their
// sampled latency. A response due at the same instant as a tick is handled
// first.
inline UacReport simulate(const UacConfig& cfg, std::uint32_t T, const LatencyModel& latency, std::uint64_t n_steps,
                          std::uint64_t seed, const ChunkBackend& backend_in = {}) {
  const ChunkBackend backend = backend_in ? backend_in : scripted_backend(T);
  const double P = cfg.control_period_ms;
  std::mt19937_64 rng(seed);
  ChunkScheduler sched(cfg);
  UacReport rep;
  rep.n_steps = n_steps;

  enum Kind : int { Arrival = 0, Tick = 1 };
  struct Event {
    double time;
    Kind kind;
    std::uint64_t seq;
    std::uint64_t request_id;
    std::vector<Action> actions;
  };
  const auto later = [](const Event& a, const Event& b) {
    if (a.time != b.time) return a.time > b.time;
    if (a.kind != b.kind) return a.kind > b.kind;
    return a.seq > b.seq;
  };
  std::priority_queue<Event, std::vector<Event>, decltype(later)> queue(later);
  std::uint64_t seq = 0;
  std::size_t in_flight = 0, responses = 0;
  double rtt_sum = 0.0;

  const auto send = [&](double now) {
    if (auto p = sched.maybe_trigger(now)) {
      ++in_flight;
      rep.max_in_flight = std::max(rep.max_in_flight, in_flight);
      queue.push({now + latency.sample(rng), Arrival, seq++, p->request_id, backend(*p)});
    }
  };

  // Bootstrap: the first chunk is awaited before control starts.
  send(0.0);
  double t0 = 0.0;
  if (!queue.empty()) {
    Event e = queue.top();
    queue.pop();
    --in_flight;
    const auto r = sched.on_arrival(e.request_id, e.actions, e.time);
    rtt_sum += r.rtt_ms;
    ++responses;
    t0 = e.time;
  }
  for (std::uint64_t k = 0; k < n_steps; ++k) queue.push({t0 + static_cast<double>(k) * P, Tick, seq++, 0, {}});

  double last_tick = t0 - P;
  while (!queue.empty()) {
    Event e = queue.top();
    queue.pop();
    if (e.kind == Arrival) {
      --in_flight;
      const auto r = sched.on_arrival(e.request_id, e.actions, e.time);
      if (!r.stale) {
        rtt_sum += r.rtt_ms;
        ++responses;
      }
      continue;
    }
    // Ticks must land exactly one period apart on the grid.
    if (std::abs((e.time - last_tick) - P) > 1e-9 * std::max(1.0, P) ||
        sched.buffer().exec_cursor() != static_cast<Step>(rep.tick_count))
      rep.cadence_ok = false;
    last_tick = e.time;
    rep.occupancy_trace.push_back(sched.buffer().remaining());
    const TickResult t = sched.tick();
    ++rep.tick_count;
    rep.action_trace.push_back(t.action);
    if (rep.tick_count < n_steps) send(e.time);
  }
  if (rep.tick_count != n_steps) rep.cadence_ok = false;

  const auto& buf = sched.buffer();
  rep.underflow_count = buf.underflow_count();
  rep.prefix_violation_count = buf.prefix_violation_count();
  rep.monotone_stitching = buf.chunk_ids_monotone();
  rep.trigger_count = sched.trigger_count();
  rep.expired_count = sched.expired_count();
  rep.stale_count = sched.stale_count();
  rep.mean_rtt_ms = responses ? rtt_sum / static_cast<double>(responses) : 0.0;
  if (!rep.occupancy_trace.empty()) {
    double s = 0.0;
    for (auto o : rep.occupancy_trace) s += static_cast<double>(o);
    rep.occupancy_mean = s / static_cast<double>(rep.occupancy_trace.size());
    rep.occupancy_p50 = nearest_rank(rep.occupancy_trace, 0.50);
    rep.occupancy_p95 = nearest_rank(rep.occupancy_trace, 0.95);
    rep.occupancy_p99 = nearest_rank(rep.occupancy_trace, 0.99);
    const auto [lo, hi] = std::minmax_element(rep.occupancy_trace.begin(), rep.occupancy_trace.end());
    rep.occupancy_min = static_cast<double>(*lo);
    rep.occupancy_max = static_cast<double>(*hi);
  }
  return rep;
}

}  // namespace lwam::uac
