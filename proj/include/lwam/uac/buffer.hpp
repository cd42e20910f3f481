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
#include <deque>
#include <map>
#include <optional>
#include <vector>

#include "lwam/config.hpp"
#include "lwam/synthworld.hpp"

namespace lwam::uac {

using Step = std::int64_t;

struct BufferEntry {
  Action action{};
  std::uint64_t chunk_id = 0;
};

// One stitching write. `lock_until` and `cursor` are the guards in force when
// the write happened, kept so the log can be audited independently.
struct AuditRecord {
  Step step = 0;
  std::uint64_t chunk_id = 0;
  std::optional<std::uint64_t> old_chunk_id;
  Step lock_until = 0;
  Step cursor = 0;
};

struct TickResult {
  Step step = 0;
  Action action{};
  bool underflow = false;
};

struct StitchResult {
  Step s0 = 0;              // first step written (or that would have been)
  std::size_t written = 0;  // number of entries written
  bool expired = false;     // the whole chunk targeted already-executed steps
};

// Action schedule keyed by absolute control step. Not synchronized; the live
// client serializes access with a mutex.
class ActionBuffer {
 public:
  // Executes the action scheduled at the cursor, or holds the last executed
  // action if none is scheduled (a counted underflow).
  TickResult on_tick() {
    TickResult r;
    r.step = cursor_;
    if (auto it = entries_.find(cursor_); it != entries_.end()) {
      r.action = it->second.action;
      last_ = r.action;
    } else {
      r.action = last_;
      r.underflow = true;
      ++underflows_;
    }
    ++cursor_;
    return r;
  }

  // Chunk action i targets step t_req + i. Steps before
  // max(t_arr, lock_until_at_request) are left alone; so are executed steps.
  StitchResult stitch(std::uint64_t chunk_id, Step t_req, const std::vector<Action>& actions, Step lock_until_at_request,
                      Step t_arr) {
    StitchResult r;
    r.s0 = std::max({t_req, t_arr, lock_until_at_request, cursor_});
    lock_until_ = std::max(lock_until_, lock_until_at_request);
    const Step end = t_req + static_cast<Step>(actions.size());
    if (r.s0 >= end) {
      r.expired = true;
      return r;
    }
    for (Step s = r.s0; s < end; ++s) {
      AuditRecord rec{s, chunk_id, std::nullopt, lock_until_at_request, cursor_};
      auto it = entries_.find(s);
      if (it != entries_.end()) rec.old_chunk_id = it->second.chunk_id;
      entries_[s] = BufferEntry{actions[static_cast<std::size_t>(s - t_req)], chunk_id};
      audit_.push_back(rec);
      ++r.written;
    }
    return r;
  }

  Step exec_cursor() const { return cursor_; }
  Step lock_until() const { return lock_until_; }
  std::size_t underflow_count() const { return underflows_; }
  const std::vector<AuditRecord>& audit() const { return audit_; }
  const std::map<Step, BufferEntry>& entries() const { return entries_; }
  Action last_action() const { return last_; }
  void set_last_action(Action a) { last_ = a; }

  std::optional<Step> max_buffered_step() const {
    if (entries_.empty()) return std::nullopt;
    return entries_.rbegin()->first;
  }

  // Scheduled steps from the cursor onward (0 when starved).
  Step remaining() const {
    const auto m = max_buffered_step();
    return m ? std::max<Step>(0, *m - cursor_ + 1) : 0;
  }

  // One past the last step the buffer can serve without a new chunk.
  Step committed_end() const { return cursor_ + remaining(); }

  // Audit: writes below the request's lock or below the cursor.
  std::size_t prefix_violation_count() const {
    return static_cast<std::size_t>(std::count_if(audit_.begin(), audit_.end(), [](const AuditRecord& a) {
      return a.step < a.lock_until || a.step < a.cursor;
    }));
  }

  // Audit: every step only ever moves to newer chunks.
  bool chunk_ids_monotone() const {
    std::map<Step, std::uint64_t> seen;
    for (const auto& a : audit_) {
      auto [it, fresh] = seen.emplace(a.step, a.chunk_id);
      if (!fresh) {
        if (a.chunk_id < it->second) return false;
        it->second = a.chunk_id;
      }
    }
    return true;
  }

 private:
  std::map<Step, BufferEntry> entries_;
  std::vector<AuditRecord> audit_;
  Step cursor_ = 0;
  Step lock_until_ = 0;
  Action last_{0.0, 0.0};
  std::size_t underflows_ = 0;
};

// Exponentially weighted round-trip estimate.
class DelayEstimator {
 public:
  static constexpr std::size_t kHistory = 32;

  explicit DelayEstimator(double init_ms = 80.0, double alpha = 0.2) : ewma_(init_ms), alpha_(alpha) {}

  void update(double rtt_ms) {
    ewma_ = alpha_ * rtt_ms + (1.0 - alpha_) * ewma_;
    last_.push_back(rtt_ms);
    if (last_.size() > kHistory) last_.pop_front();
  }
  double ewma_ms() const { return ewma_; }
  double alpha() const { return alpha_; }
  const std::deque<double>& last_samples() const { return last_; }

 private:
  double ewma_;
  double alpha_;
  std::deque<double> last_;
};

// Request when fewer than this many steps remain.
inline Step trigger_threshold(double ewma_ms, double period_ms, double safety) {
  return std::max<Step>(1, static_cast<Step>(std::ceil(safety * ewma_ms / period_ms)));
}

// Steps expected to elapse while a request is in flight.
inline Step lock_steps(double ewma_ms, double period_ms) {
  return std::max<Step>(0, static_cast<Step>(std::ceil(ewma_ms / period_ms)));
}

inline bool should_trigger(Step remaining, Step threshold, bool in_flight) { return !in_flight && remaining < threshold; }

struct PendingRequest {
  std::uint64_t request_id = 0;
  Step t_req = 0;
  Step lock_until = 0;
  double send_ms = 0.0;
};

struct ArrivalResult {
  bool stale = false;
  StitchResult stitch;
  double rtt_ms = 0.0;
};

// Client-side protocol state shared by the simulator and the live client:
// the buffer, the delay estimate, and the single in-flight request.
class ChunkScheduler {
 public:
  explicit ChunkScheduler(const UacConfig& cfg) : cfg_(cfg), est_(cfg.delay_init_ms, cfg.alpha) {}

  TickResult tick() { return buffer_.on_tick(); }

  Step threshold() const { return trigger_threshold(est_.ewma_ms(), cfg_.control_period_ms, cfg_.safety); }

  // Issues a request if the buffer is running low and nothing is in flight.
  // The lock is frozen here and never extends past what is already
  // scheduled, so it only ever protects committed entries.
  std::optional<PendingRequest> maybe_trigger(double now_ms) {
    if (!should_trigger(buffer_.remaining(), threshold(), in_flight_.has_value())) return std::nullopt;
    PendingRequest p;
    p.request_id = next_id_++;
    p.t_req = buffer_.exec_cursor();
    p.lock_until = std::min(p.t_req + lock_steps(est_.ewma_ms(), cfg_.control_period_ms), buffer_.committed_end());
    p.send_ms = now_ms;
    in_flight_ = p;
    ++triggers_;
    return p;
  }

  ArrivalResult on_arrival(std::uint64_t request_id, const std::vector<Action>& actions, double now_ms) {
    ArrivalResult r;
    if (!in_flight_ || in_flight_->request_id != request_id) {
      r.stale = true;
      ++stale_;
      return r;
    }
    const PendingRequest p = *in_flight_;
    r.stitch = buffer_.stitch(p.request_id, p.t_req, actions, p.lock_until, buffer_.exec_cursor());
    if (r.stitch.expired) ++expired_;
    r.rtt_ms = now_ms - p.send_ms;
    est_.update(r.rtt_ms);
    in_flight_.reset();
    return r;
  }

  const ActionBuffer& buffer() const { return buffer_; }
  const DelayEstimator& estimator() const { return est_; }
  const std::optional<PendingRequest>& in_flight() const { return in_flight_; }
  std::size_t trigger_count() const { return triggers_; }
  std::size_t stale_count() const { return stale_; }
  std::size_t expired_count() const { return expired_; }

 private:
  UacConfig cfg_;
  ActionBuffer buffer_;
  DelayEstimator est_;
  std::optional<PendingRequest> in_flight_;
  std::uint64_t next_id_ = 0;
  std::size_t triggers_ = 0, stale_ = 0, expired_ = 0;
};

}  // namespace lwam::uac
