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

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "lwam/binary_io.hpp"
#include "lwam/config.hpp"
#include "lwam/optimizer.hpp"
#include "lwam/packing.hpp"
#include "lwam/params.hpp"

namespace lwam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Complete training state: enough to resume bit-for-bit.
struct Checkpoint {
  RunConfig config;
  PackedLayout layout;  // training layout
  ParamStore<double> params;
  AdamWState adam;
  std::uint64_t step = 0;
  std::string rng_state;  // textual mt19937_64 state
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  le::put_magic(os, "LWCK");
  le::put_u32(os, kCheckpointVersion);
  le::put_string(os, to_json(c.config).dump());

  const auto& l = c.layout;
  for (std::size_t v : {l.counts.n_instr, l.counts.n_ctx_tokens, l.counts.n_state, l.counts.K, l.counts.T})
    le::put_u32(os, static_cast<std::uint32_t>(v));
  le::put_u32(os, static_cast<std::uint32_t>(l.total_len()));
  for (std::size_t i = 0; i < l.total_len(); ++i) {
    os.put(static_cast<char>(l.roles[i]));
    os.put(static_cast<char>(l.branch[i]));
    le::put_u32(os, static_cast<std::uint32_t>(l.position_ids[i]));
  }

  le::put_u32(os, static_cast<std::uint32_t>(c.params.entries().size()));
  for (const auto& e : c.params.entries()) {
    le::put_string(os, e.name);
    os.put(e.frozen ? 1 : 0);
    le::put_u32(os, static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) le::put_u32(os, static_cast<std::uint32_t>(d));
    le::put_f64s(os, e.tensor.data(), e.tensor.size());
  }

  le::put_u64(os, c.adam.t);
  le::put_u32(os, static_cast<std::uint32_t>(c.adam.m.size()));
  for (std::size_t k = 0; k < c.adam.m.size(); ++k) {
    le::put_u64(os, c.adam.m[k].size());
    le::put_f64s(os, c.adam.m[k].data(), c.adam.m[k].size());
    le::put_f64s(os, c.adam.v[k].data(), c.adam.v[k].size());
  }
  le::put_u64(os, c.step);
  le::put_string(os, c.rng_state);
  if (!os) throw FormatError("write_checkpoint: stream error");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  le::expect_magic(is, "LWCK", "checkpoint");
  const std::uint32_t version = le::get_u32(is);
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config = config_from_json(json::parse(le::get_string(is)));

  auto& l = c.layout;
  for (std::size_t* v : {&l.counts.n_instr, &l.counts.n_ctx_tokens, &l.counts.n_state, &l.counts.K, &l.counts.T})
    *v = le::get_u32(is);
  const std::uint32_t n = le::get_u32(is);
  for (std::uint32_t i = 0; i < n; ++i) {
    const int role = is.get(), branch = is.get();
    if (role < 0 || role > 6 || branch < 0 || branch > 2) throw FormatError("checkpoint: bad layout slot");
    l.roles.push_back(static_cast<TokenRole>(role));
    l.branch.push_back(static_cast<Branch>(branch));
    l.position_ids.push_back(le::get_u32(is));
  }
  validate_layout(l);

  const std::uint32_t n_params = le::get_u32(is);
  for (std::uint32_t p = 0; p < n_params; ++p) {
    const std::string name = le::get_string(is, 4096);
    const int frozen = is.get();
    if (frozen != 0 && frozen != 1) throw FormatError("checkpoint: bad frozen flag for " + name);
    const std::uint32_t rank = le::get_u32(is);
    if (rank > 8) throw FormatError("checkpoint: bad rank for " + name);
    Shape shape(rank);
    for (auto& d : shape) d = le::get_u32(is);
    std::vector<double> values(numel(shape));
    le::get_f64s(is, values.data(), values.size());
    c.params.add(name, shape, std::move(values), frozen == 1);
  }

  c.adam.t = le::get_u64(is);
  const std::uint32_t n_moments = le::get_u32(is);
  for (std::uint32_t k = 0; k < n_moments; ++k) {
    const std::uint64_t sz = le::get_u64(is);
    if (sz > (std::uint64_t{1} << 32)) throw FormatError("checkpoint: moment buffer too large");
    c.adam.m.emplace_back(sz);
    c.adam.v.emplace_back(sz);
    le::get_f64s(is, c.adam.m.back().data(), sz);
    le::get_f64s(is, c.adam.v.back().data(), sz);
  }
  c.step = le::get_u64(is);
  c.rng_state = le::get_string(is, 1 << 20);
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, c);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace lwam
