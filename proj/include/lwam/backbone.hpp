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

#include <map>
#include <string>
#include <vector>

#include "lwam/config.hpp"
#include "lwam/numerics.hpp"
#include "lwam/packing.hpp"
#include "lwam/params.hpp"

namespace lwam {

// Mixture-of-Transformers routing: state and action slots go to the Action
// expert, everything else (including latent and future slots) to the
// Understanding expert.
enum class Expert { Understanding, Action };

inline Expert expert_for(TokenRole r) {
  switch (r) {
    case TokenRole::State:
    case TokenRole::PriorAction:
    case TokenRole::PostAction:
      return Expert::Action;
    default:
      return Expert::Understanding;
  }
}

inline const char* expert_prefix(Expert e) { return e == Expert::Understanding ? "u" : "a"; }

inline void init_backbone_params(ParamStore<double>& ps, const ModelConfig& m, std::size_t action_dim, Initializer& init) {
  const std::size_t d = m.d;
  for (Expert e : {Expert::Understanding, Expert::Action}) {
    const std::size_t hidden = d * (e == Expert::Understanding ? m.ffn_mult_understanding : m.ffn_mult_action);
    for (std::size_t l = 0; l < m.n_layers; ++l) {
      const std::string p = std::string(expert_prefix(e)) + ".l" + std::to_string(l) + ".";
      ps.add(p + "norm_attn", {d}, Initializer::constant(d, 1.0));
      ps.add(p + "wq", {d, d}, init.fan_in(d, d));
      ps.add(p + "wk", {d, d}, init.fan_in(d, d));
      ps.add(p + "wv", {d, d}, init.fan_in(d, d));
      ps.add(p + "wo", {d, d}, init.normal(d * d, 0.5 / std::sqrt(double(d) * (m.n_layers))));
      ps.add(p + "norm_ffn", {d}, Initializer::constant(d, 1.0));
      ps.add(p + "ffn_in", {d, hidden}, init.fan_in(d, hidden));
      ps.add(p + "ffn_out", {hidden, d}, init.normal(hidden * d, 0.5 / std::sqrt(double(hidden) * (m.n_layers))));
    }
    ps.add(std::string(expert_prefix(e)) + ".final_norm", {d}, Initializer::constant(d, 1.0));
  }
  ps.add("head.w", {d, action_dim}, init.normal(d * action_dim, 0.01));
  ps.add("head.b", {action_dim}, Initializer::constant(action_dim, 0.0));
}

template <typename T>
struct AlignmentTaps {
  std::vector<Tensor<T>> prior;  // per tapped layer, [blocks*K x d]
  std::vector<Tensor<T>> post;
  std::vector<std::size_t> layer_indices;
};

template <typename T>
struct BackboneOutput {
  Tensor<T> velocity_prior;  // [blocks*T x A], undefined if the layout has no prior branch
  Tensor<T> velocity_post;
  AlignmentTaps<T> taps;
};

// Row bookkeeping for a batch of identical layouts stacked row-wise.
struct RoutePlan {
  std::vector<std::size_t> u_rows, a_rows;  // stacked rows per expert, ascending
  std::vector<std::size_t> restore;         // stacked row -> index in [u_rows; a_rows]
  std::vector<std::size_t> positions;       // stacked position IDs
  std::vector<std::size_t> prior_latent, post_latent;  // indices into the Understanding part
  std::vector<std::size_t> prior_action, post_action;  // indices into the Action part

  RoutePlan(const PackedLayout& layout, std::size_t blocks) {
    const std::size_t n = layout.total_len();
    restore.resize(n * blocks);
    std::vector<std::size_t> part_index(n * blocks);
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = b * n + i;
        positions.push_back(layout.position_ids[i]);
        if (expert_for(layout.roles[i]) == Expert::Understanding) {
          part_index[r] = u_rows.size();
          u_rows.push_back(r);
        } else {
          part_index[r] = a_rows.size();
          a_rows.push_back(r);
        }
      }
    for (std::size_t r = 0; r < n * blocks; ++r) {
      const bool is_u = expert_for(layout.roles[r % n]) == Expert::Understanding;
      restore[r] = is_u ? part_index[r] : u_rows.size() + part_index[r];
    }
    for (std::size_t b = 0; b < blocks; ++b)
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = b * n + i;
        switch (layout.roles[i]) {
          case TokenRole::LatentQuery: prior_latent.push_back(part_index[r]); break;
          case TokenRole::FutureEmbed: post_latent.push_back(part_index[r]); break;
          case TokenRole::PriorAction: prior_action.push_back(part_index[r]); break;
          case TokenRole::PostAction: post_action.push_back(part_index[r]); break;
          default: break;
        }
      }
  }
};

namespace detail {

template <typename T>
Tensor<T> merge_parts(const Tensor<T>& u, const Tensor<T>& a, const RoutePlan& plan) {
  if (plan.a_rows.empty()) return gather_rows(u, plan.restore);
  if (plan.u_rows.empty()) return gather_rows(a, plan.restore);
  return gather_rows(concatenate<T>({u, a}), plan.restore);
}

template <typename T>
Tensor<T> split_part(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  return gather_rows(x, rows);
}

}  // namespace detail

// Joint masked attention over all slots with role-routed parameters. The
// input holds `blocks` copies of the layout stacked row-wise.
template <typename T>
BackboneOutput<T> backbone_forward(const PackedLayout& layout, const DualBranchMask& mask, const Tensor<T>& slots,
                                   std::size_t blocks, const ParamStore<T>& ps, const ModelConfig& m) {
  const std::size_t n = layout.total_len();
  if (slots.rank() != 2 || slots.shape()[0] != n * blocks || slots.shape()[1] != m.d)
    throw DimensionError("backbone: slots " + shape_str(slots.shape()) + " vs layout of " + std::to_string(n) +
                         " slots x " + std::to_string(blocks) + " blocks, width " + std::to_string(m.d));
  if (mask.rows() != n || mask.cols() != n) throw DimensionError("backbone: mask does not match layout");
  const RoutePlan plan(layout, blocks);
  Tensor<T> xu = detail::split_part(slots, plan.u_rows);
  Tensor<T> xa = detail::split_part(slots, plan.a_rows);
  const bool has_u = !plan.u_rows.empty(), has_a = !plan.a_rows.empty();

  BackboneOutput<T> out;
  const std::size_t first_tap = m.n_layers - std::min<std::size_t>(m.align_last_L, m.n_layers);
  auto proj = [&](const char* name, const Tensor<T>& hu, const Tensor<T>& ha, std::size_t l) {
    const std::string suffix = ".l" + std::to_string(l) + "." + name;
    Tensor<T> pu = has_u ? linear(hu, ps.get("u" + suffix)) : Tensor<T>{};
    Tensor<T> pa = has_a ? linear(ha, ps.get("a" + suffix)) : Tensor<T>{};
    return detail::merge_parts(pu, pa, plan);
  };
  for (std::size_t l = 0; l < m.n_layers; ++l) {
    const std::string lu = "u.l" + std::to_string(l) + ".", la = "a.l" + std::to_string(l) + ".";
    const Tensor<T> hu = has_u ? rms_norm(xu, ps.get(lu + "norm_attn")) : Tensor<T>{};
    const Tensor<T> ha = has_a ? rms_norm(xa, ps.get(la + "norm_attn")) : Tensor<T>{};
    const auto base = static_cast<T>(m.rope_base);
    const Tensor<T> q = rope(proj("wq", hu, ha, l), plan.positions, m.n_heads, base);
    const Tensor<T> k = rope(proj("wk", hu, ha, l), plan.positions, m.n_heads, base);
    const Tensor<T> v = proj("wv", hu, ha, l);
    const Tensor<T> att = block_attention(q, k, v, mask, blocks, m.n_heads);
    if (has_u) {
      xu = add(xu, linear(detail::split_part(att, plan.u_rows), ps.get(lu + "wo")));
      const Tensor<T> f = relu(linear(rms_norm(xu, ps.get(lu + "norm_ffn")), ps.get(lu + "ffn_in")));
      xu = add(xu, linear(f, ps.get(lu + "ffn_out")));
    }
    if (has_a) {
      xa = add(xa, linear(detail::split_part(att, plan.a_rows), ps.get(la + "wo")));
      const Tensor<T> f = relu(linear(rms_norm(xa, ps.get(la + "norm_ffn")), ps.get(la + "ffn_in")));
      xa = add(xa, linear(f, ps.get(la + "ffn_out")));
    }
    if (l >= first_tap) {
      out.taps.layer_indices.push_back(l);
      if (!plan.prior_latent.empty()) out.taps.prior.push_back(gather_rows(xu, plan.prior_latent));
      if (!plan.post_latent.empty()) out.taps.post.push_back(gather_rows(xu, plan.post_latent));
    }
  }
  if (has_a) {
    const Tensor<T> ha = rms_norm(xa, ps.get("a.final_norm"));
    if (!plan.prior_action.empty())
      out.velocity_prior = linear(gather_rows(ha, plan.prior_action), ps.get("head.w"), ps.get("head.b"));
    if (!plan.post_action.empty())
      out.velocity_post = linear(gather_rows(ha, plan.post_action), ps.get("head.w"), ps.get("head.b"));
  }
  return out;
}

// Parameter counts grouped by (module, expert).
struct ParamCountRow {
  std::string module;
  std::string expert;  // understanding | action | frozen | shared
  std::size_t count = 0;
};

template <typename T>
std::vector<ParamCountRow> count_parameters(const ParamStore<T>& ps) {
  std::map<std::pair<std::string, std::string>, std::size_t> acc;
  for (const auto& e : ps.entries()) {
    const std::string& nm = e.name;
    std::string module, expert;
    auto starts = [&](const char* p) { return nm.rfind(p, 0) == 0; };
    if (e.frozen) {
      module = "future_projector";
      expert = "frozen";
    } else if (starts("u.") || starts("a.")) {
      expert = starts("u.") ? "understanding" : "action";
      if (nm.find(".ffn_") != std::string::npos) module = "ffn";
      else if (nm.find("final_norm") != std::string::npos) module = "final_norm";
      else if (nm.find("norm") != std::string::npos) module = "norm";
      else module = "attention";
    } else if (starts("enc.ctx.")) {
      module = "context_encoder";
      expert = "understanding";
    } else if (starts("enc.res.")) {
      module = "resampler";
      expert = "understanding";
    } else if (starts("embed.instr") || starts("embed.latent")) {
      module = starts("embed.instr") ? "instruction_embedding" : "latent_queries";
      expert = "understanding";
    } else if (starts("embed.")) {
      module = nm.find("time") != std::string::npos ? "time_embedding" : "input_projection";
      expert = "action";
    } else if (starts("head.")) {
      module = "velocity_head";
      expert = "action";
    } else {
      module = nm;
      expert = "shared";
    }
    acc[{module, expert}] += e.tensor.size();
  }
  std::vector<ParamCountRow> rows;
  for (const auto& [key, n] : acc) rows.push_back({key.first, key.second, n});
  return rows;
}

}  // namespace lwam
