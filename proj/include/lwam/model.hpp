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
#include <string>
#include <vector>

#include "lwam/backbone.hpp"
#include "lwam/config.hpp"
#include "lwam/encoders.hpp"
#include "lwam/packing.hpp"

namespace lwam {

inline constexpr std::size_t kStateDim = 4;
inline constexpr std::size_t kActionDim = 2;

// Which slots a forward pass materializes.
enum class LayoutKind { Dual, PriorOnly, PosteriorOnly, NoLatent };

enum class Ablation { Dual, PriorOnly, NoLatent };

inline Ablation parse_ablation(const std::string& s) {
  if (s == "dual") return Ablation::Dual;
  if (s == "prior_only") return Ablation::PriorOnly;
  if (s == "no_latent") return Ablation::NoLatent;
  throw ConfigError("train.ablation", "unknown ablation " + s);
}

// Layout used by the deployable policy: prior branch only (or no latent slots).
inline LayoutKind inference_layout(Ablation a) { return a == Ablation::NoLatent ? LayoutKind::NoLatent : LayoutKind::PriorOnly; }
inline LayoutKind training_layout(Ablation a) {
  return a == Ablation::Dual ? LayoutKind::Dual : inference_layout(a);
}

inline PackedLayout make_layout(const RunConfig& c, LayoutKind kind) {
  const std::size_t n_ctx = c.world.H * context_tokens_per_frame(c);
  const std::size_t ni = c.world.n_instr, K = c.model.K, T = c.world.T;
  switch (kind) {
    case LayoutKind::Dual: return build_layout(ni, n_ctx, 1, K, T);
    case LayoutKind::PriorOnly: return build_single_branch_layout(ni, n_ctx, 1, K, T, Branch::Prior);
    case LayoutKind::PosteriorOnly: return build_single_branch_layout(ni, n_ctx, 1, K, T, Branch::Posterior);
    case LayoutKind::NoLatent: return build_single_branch_layout(ni, n_ctx, 1, 0, T, Branch::Prior);
  }
  throw LayoutError("unknown layout kind");
}

template <typename T>
struct ModelInputs {
  std::size_t batch = 0;
  std::vector<std::size_t> instruction;  // [batch * n_instr] token IDs
  Tensor<T> context_frames;              // batch*H frames
  Tensor<T> state;                       // [batch x 4]
  Tensor<T> future_frames;               // batch*n_future frames; needed when the posterior branch is present
  Tensor<T> noised_actions;              // [batch*T x A]
  std::vector<T> flow_time;              // [batch]
};

inline void init_model_params(ParamStore<double>& ps, const RunConfig& c, std::uint64_t seed) {
  Initializer init(seed);
  const std::size_t d = c.model.d;
  ps.add("embed.instr", {c.model.vocab, d}, init.normal(c.model.vocab * d, 1.0));
  ps.add("embed.latent", {c.model.K, d}, init.normal(c.model.K * d, 1.0));
  ps.add("embed.state_w", {kStateDim, d}, init.fan_in(kStateDim, d));
  ps.add("embed.state_b", {d}, Initializer::constant(d, 0.0));
  ps.add("embed.action_w", {kActionDim, d}, init.fan_in(kActionDim, d));
  ps.add("embed.action_b", {d}, Initializer::constant(d, 0.0));
  const std::size_t tf = c.model.time_features;
  ps.add("embed.time_w1", {tf, d}, init.fan_in(tf, d));
  ps.add("embed.time_b1", {d}, Initializer::constant(d, 0.0));
  ps.add("embed.time_w2", {d, d}, init.fan_in(d, d));
  ps.add("embed.time_b2", {d}, Initializer::constant(d, 0.0));
  init_encoder_params(ps, c, init);
  init_backbone_params(ps, c.model, kActionDim, init);
}

// Sinusoidal features of the flow time, [sin(w_j t), cos(w_j t)] with w_j
// log-spaced in [1, 100].
template <typename T>
std::vector<T> time_features(T t, std::size_t n) {
  const std::size_t half = n / 2;
  std::vector<T> f(n);
  for (std::size_t j = 0; j < half; ++j) {
    const T w = std::pow(T{100}, half > 1 ? T(j) / T(half - 1) : T{0});
    f[j] = std::sin(w * t);
    f[half + j] = std::cos(w * t);
  }
  return f;
}

template <typename T>
struct ModelOutput {
  BackboneOutput<T> backbone;
  PackedLayout layout;
};

// Dual-branch world-action policy: slot embedding, encoders and the MoT
// backbone over one packed layout.
template <typename T>
class WorldActionModel {
 public:
  using value_type = T;

  WorldActionModel() = default;
  WorldActionModel(RunConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {}

  static WorldActionModel initialize(const RunConfig& cfg, std::uint64_t seed) {
    ParamStore<double> ps;
    init_model_params(ps, cfg, seed);
    return WorldActionModel(cfg, ps.template cast<T>());
  }

  template <typename U>
  WorldActionModel<U> cast() const {
    return WorldActionModel<U>(cfg_, params_.template cast<U>());
  }

  const RunConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Rows of the stacked slot matrix, in layout order for every example.
  Tensor<T> embed_slots(const ModelInputs<T>& in, const PackedLayout& layout) const {
    const std::size_t B = in.batch, Tn = cfg_.world.T, K = layout.counts.K;
    const std::size_t ni = cfg_.world.n_instr, nc = layout.counts.n_ctx_tokens;
    check_inputs(in, layout);

    std::vector<Tensor<T>> parts;
    std::vector<std::size_t> offset(7, 0);
    std::size_t rows = 0;
    auto push = [&](TokenRole r, Tensor<T> t) {
      offset[static_cast<std::size_t>(r)] = rows;
      rows += t.rows();
      parts.push_back(std::move(t));
    };
    push(TokenRole::Instruction, embedding_lookup(params_.get("embed.instr"), in.instruction));
    push(TokenRole::ContextObs, encode_context(in.context_frames, B, params_, cfg_));
    push(TokenRole::State, linear(in.state, params_.get("embed.state_w"), params_.get("embed.state_b")));
    const bool prior = layout.has_branch(Branch::Prior), post = layout.has_branch(Branch::Posterior);
    if (prior && K > 0) {
      std::vector<std::size_t> rep(B * K);
      for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i % K;
      push(TokenRole::LatentQuery, gather_rows(params_.get("embed.latent"), std::move(rep)));
    }
    if (post) push(TokenRole::FutureEmbed, encode_future(in.future_frames, B, params_, cfg_));

    // Both action blocks share a_t and the flow-time embedding.
    std::vector<T> feats;
    for (std::size_t b = 0; b < B; ++b) {
      auto f = time_features(in.flow_time[b], cfg_.model.time_features);
      feats.insert(feats.end(), f.begin(), f.end());
    }
    const Tensor<T> tf = Tensor<T>::constant({B, cfg_.model.time_features}, std::move(feats));
    const Tensor<T> temb = linear(relu(linear(tf, params_.get("embed.time_w1"), params_.get("embed.time_b1"))),
                                  params_.get("embed.time_w2"), params_.get("embed.time_b2"));
    std::vector<std::size_t> per_row(B * Tn);
    for (std::size_t i = 0; i < per_row.size(); ++i) per_row[i] = i / Tn;
    const Tensor<T> act = add(linear(in.noised_actions, params_.get("embed.action_w"), params_.get("embed.action_b")),
                              gather_rows(temb, std::move(per_row)));
    const std::size_t act_offset = rows;
    parts.push_back(act);
    rows += act.rows();

    const Tensor<T> all = concatenate(parts);
    const std::size_t n = layout.total_len();
    std::vector<std::size_t> index(B * n);
    std::vector<std::size_t> seen(7, 0);
    for (std::size_t b = 0; b < B; ++b) {
      std::fill(seen.begin(), seen.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        const TokenRole r = layout.roles[i];
        const auto ri = static_cast<std::size_t>(r);
        const std::size_t j = seen[ri]++;
        std::size_t src = 0;
        switch (r) {
          case TokenRole::Instruction: src = offset[ri] + b * ni + j; break;
          case TokenRole::ContextObs: src = offset[ri] + b * nc + j; break;
          case TokenRole::State: src = offset[ri] + b + j; break;
          case TokenRole::LatentQuery:
          case TokenRole::FutureEmbed: src = offset[ri] + b * K + j; break;
          case TokenRole::PriorAction:
          case TokenRole::PostAction: src = act_offset + b * Tn + j; break;
        }
        index[b * n + i] = src;
      }
    }
    return gather_rows(all, std::move(index));
  }

  ModelOutput<T> forward(const ModelInputs<T>& in, LayoutKind kind) const {
    ModelOutput<T> out;
    out.layout = make_layout(cfg_, kind);
    const DualBranchMask mask = build_mask(out.layout);
    const Tensor<T> slots = embed_slots(in, out.layout);
    out.backbone = backbone_forward(out.layout, mask, slots, in.batch, params_, cfg_.model);
    return out;
  }

 private:
  void check_inputs(const ModelInputs<T>& in, const PackedLayout& layout) const {
    const std::size_t B = in.batch;
    const auto& w = cfg_.world;
    const std::size_t frame = kChannels * w.context_res * w.context_res;
    if (B == 0) throw DimensionError("model: empty batch");
    if (in.instruction.size() != B * w.n_instr) throw DimensionError("model: instruction length mismatch");
    for (std::size_t id : in.instruction)
      if (id >= cfg_.model.vocab) throw DimensionError("model: instruction token " + std::to_string(id) + " outside vocab");
    if (in.context_frames.size() != B * w.H * frame) throw DimensionError("model: context frames size mismatch");
    if (in.state.rank() != 2 || in.state.shape()[0] != B || in.state.shape()[1] != kStateDim)
      throw DimensionError("model: state must be [batch x 4], got " + shape_str(in.state.shape()));
    if (in.noised_actions.rank() != 2 || in.noised_actions.shape()[0] != B * w.T ||
        in.noised_actions.shape()[1] != kActionDim)
      throw DimensionError("model: noised actions must be [batch*T x 2], got " + shape_str(in.noised_actions.shape()));
    if (in.flow_time.size() != B) throw DimensionError("model: one flow time per example required");
    if (layout.has_branch(Branch::Posterior) &&
        in.future_frames.size() != B * w.n_future * kChannels * w.future_res * w.future_res)
      throw DimensionError("model: future frames size mismatch");
  }

  RunConfig cfg_;
  ParamStore<T> params_;
};

}  // namespace lwam
