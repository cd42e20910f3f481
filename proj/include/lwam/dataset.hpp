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
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "lwam/binary_io.hpp"
#include "lwam/synthworld.hpp"

namespace lwam {

inline constexpr std::uint32_t kDatasetVersion = 1;

// Everything needed to interpret a chunk payload.
struct DatasetDims {
  std::uint32_t H = 0, T = 0, n_instr = 0, channels = 3, context_res = 0, future_res = 0;
  std::uint32_t state_dim = 4, action_dim = 2, n_future = 0, future_stride = 0;
  bool operator==(const DatasetDims&) const = default;

  std::size_t context_size() const { return std::size_t{H} * channels * context_res * context_res; }
  std::size_t future_size() const { return std::size_t{n_future} * channels * future_res * future_res; }
  std::size_t payload_floats() const {
    return n_instr + context_size() + state_dim + std::size_t{T} * action_dim + future_size();
  }

  static DatasetDims from(const WorldConfig& w) {
    DatasetDims d;
    d.H = w.H;
    d.T = w.T;
    d.n_instr = w.n_instr;
    d.context_res = w.context_res;
    d.future_res = w.future_res;
    d.n_future = w.n_future;
    d.future_stride = w.future_stride;
    return d;
  }
};

// One training example. Actions are raw displacements (not normalized).
struct TrajectoryChunk {
  std::vector<float> instruction;     // [n_instr] token IDs stored as floats
  std::vector<float> context_frames;  // [H x 3 x R x R], oldest first
  std::vector<float> state;           // agent xy, object xy at the current step
  std::vector<float> actions;         // [T x 2]
  std::vector<float> future_frames;   // [n_future x 3 x Rf x Rf]
  bool operator==(const TrajectoryChunk&) const = default;
};

struct Dataset {
  DatasetDims dims;
  std::vector<TrajectoryChunk> chunks;
  std::size_t skipped_episodes = 0;  // episodes too short to yield a chunk
};

inline constexpr std::size_t kDatasetHeaderBytes = 4 + 12 * 4;

inline std::uint64_t dataset_file_bytes(const DatasetDims& d, std::uint64_t n_chunks) {
  return kDatasetHeaderBytes + n_chunks * d.payload_floats() * sizeof(float);
}

// Number of chunks an episode of E states yields: the current step c needs
// H-1 steps of history and T*future_stride steps ahead.
inline std::size_t chunks_per_episode(std::size_t E, std::size_t H, std::size_t T, std::size_t future_stride,
                                      std::size_t chunk_stride) {
  const std::size_t need = H + T * future_stride;
  if (E < need) return 0;
  return (E - need) / chunk_stride + 1;
}

inline TrajectoryChunk make_chunk(const Episode& ep, std::size_t c, const WorldConfig& w) {
  TrajectoryChunk ch;
  const auto& s = ep.states[c];
  for (auto t : instruction_tokens(s.goal_id, w)) ch.instruction.push_back(static_cast<float>(t));
  for (std::size_t h = 0; h < w.H; ++h) {
    const auto f = render(ep.states[c + 1 + h - w.H], w.context_res, w);
    ch.context_frames.insert(ch.context_frames.end(), f.begin(), f.end());
  }
  ch.state = {float(s.agent[0]), float(s.agent[1]), float(s.object[0]), float(s.object[1])};
  for (std::size_t i = 0; i < w.T; ++i) {
    ch.actions.push_back(static_cast<float>(ep.actions[c + i][0]));
    ch.actions.push_back(static_cast<float>(ep.actions[c + i][1]));
  }
  for (std::size_t j = 1; j <= w.n_future; ++j) {
    const auto f = render(ep.states[c + j * w.future_stride], w.future_res, w);
    ch.future_frames.insert(ch.future_frames.end(), f.begin(), f.end());
  }
  return ch;
}

inline std::vector<TrajectoryChunk> episode_chunks(const Episode& ep, const WorldConfig& w) {
  std::vector<TrajectoryChunk> out;
  const std::size_t n = chunks_per_episode(ep.states.size(), w.H, w.T, w.future_stride, w.chunk_stride);
  for (std::size_t i = 0; i < n; ++i) out.push_back(make_chunk(ep, w.H - 1 + i * w.chunk_stride, w));
  return out;
}

// Expert episodes from seeded starts, chunked and shuffled by the same seed.
inline Dataset generate_dataset(const WorldConfig& w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.dims = DatasetDims::from(w);
  for (std::uint32_t e = 0; e < w.n_episodes; ++e) {
    const Episode ep = rollout_expert(sample_initial_state(rng, w), w);
    auto chunks = episode_chunks(ep, w);
    if (chunks.empty()) ++ds.skipped_episodes;
    for (auto& c : chunks) ds.chunks.push_back(std::move(c));
  }
  std::shuffle(ds.chunks.begin(), ds.chunks.end(), rng);
  return ds;
}

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  const auto& d = ds.dims;
  le::put_magic(os, "LWAM");
  for (std::uint32_t v : {kDatasetVersion, static_cast<std::uint32_t>(ds.chunks.size()), d.H, d.T, d.n_instr,
                          d.channels, d.context_res, d.future_res, d.state_dim, d.action_dim, d.n_future,
                          d.future_stride})
    le::put_u32(os, v);
  for (const auto& c : ds.chunks) {
    if (c.instruction.size() != d.n_instr || c.context_frames.size() != d.context_size() ||
        c.state.size() != d.state_dim || c.actions.size() != std::size_t{d.T} * d.action_dim ||
        c.future_frames.size() != d.future_size())
      throw FormatError("write_dataset: chunk does not match dataset dimensions");
    for (const auto* v : {&c.instruction, &c.context_frames, &c.state, &c.actions, &c.future_frames})
      le::put_f32s(os, v->data(), v->size());
  }
  if (!os) throw FormatError("write_dataset: stream error");
}

inline Dataset read_dataset(std::istream& is) {
  le::expect_magic(is, "LWAM", "dataset");
  const std::uint32_t version = le::get_u32(is);
  if (version != kDatasetVersion) throw FormatError("dataset: unsupported version " + std::to_string(version));
  Dataset ds;
  const std::uint32_t n = le::get_u32(is);
  auto& d = ds.dims;
  for (std::uint32_t* f : {&d.H, &d.T, &d.n_instr, &d.channels, &d.context_res, &d.future_res, &d.state_dim,
                           &d.action_dim, &d.n_future, &d.future_stride})
    *f = le::get_u32(is);
  ds.chunks.resize(n);
  for (auto& c : ds.chunks) {
    c.instruction.resize(d.n_instr);
    c.context_frames.resize(d.context_size());
    c.state.resize(d.state_dim);
    c.actions.resize(std::size_t{d.T} * d.action_dim);
    c.future_frames.resize(d.future_size());
    for (auto* v : {&c.instruction, &c.context_frames, &c.state, &c.actions, &c.future_frames})
      le::get_f32s(is, v->data(), v->size());
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("dataset: trailing bytes after payload");
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_dataset(os, ds);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_dataset(is);
}

}  // namespace lwam
