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

#include <string>
#include <vector>

#include "lwam/config.hpp"
#include "lwam/numerics.hpp"
#include "lwam/params.hpp"

namespace lwam {

inline constexpr std::size_t kChannels = 3;

// A stack of frames with their control-step offsets.
struct FrameStack {
  std::vector<float> frames;  // [n_frames x channels x height x width], values in [0, 1]
  std::size_t n_frames = 0;
  std::size_t channels = kChannels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<int> frame_times;

  void validate() const {
    if (frames.size() != n_frames * channels * height * width)
      throw DimensionError("FrameStack: " + std::to_string(frames.size()) + " values for " + std::to_string(n_frames) +
                           " frames of " + std::to_string(channels) + "x" + std::to_string(height) + "x" +
                           std::to_string(width));
    if (!frame_times.empty()) {
      if (frame_times.size() != n_frames) throw DimensionError("FrameStack: frame_times length mismatch");
      for (std::size_t i = 1; i < frame_times.size(); ++i)
        if (frame_times[i] <= frame_times[i - 1]) throw DimensionError("FrameStack: frame offsets must increase");
    }
  }
};

inline std::size_t context_tokens_per_frame(const RunConfig& c) {
  const std::size_t s = c.world.context_res / c.model.patch;
  return s * s;
}
inline std::size_t future_tokens_per_frame(const RunConfig& c) {
  const std::size_t s = c.world.future_res / c.model.future_patch;
  return s * s;
}

inline void init_encoder_params(ParamStore<double>& ps, const RunConfig& c, Initializer& init) {
  const std::size_t d = c.model.d;
  const std::size_t feat = kChannels * c.model.patch * c.model.patch;
  ps.add("enc.ctx.patch_w", {feat, d}, init.fan_in(feat, d));
  ps.add("enc.ctx.patch_b", {d}, Initializer::constant(d, 0.0));
  ps.add("enc.ctx.pos", {context_tokens_per_frame(c), d}, init.normal(context_tokens_per_frame(c) * d, 0.02));
  ps.add("enc.ctx.frame", {c.world.H, d}, init.normal(c.world.H * d, 0.02));

  // Frozen future projector: fixed seed, never optimized.
  Initializer frozen(c.model.frozen_seed);
  const std::size_t ffeat = kChannels * c.model.future_patch * c.model.future_patch;
  ps.add("enc.fut.patch_w", {ffeat, d}, frozen.fan_in(ffeat, d), true);
  ps.add("enc.fut.patch_b", {d}, Initializer::constant(d, 0.0), true);
  ps.add("enc.fut.pos", {future_tokens_per_frame(c), d}, frozen.normal(future_tokens_per_frame(c) * d, 0.02), true);
  ps.add("enc.fut.frame", {c.world.n_future, d}, frozen.normal(c.world.n_future * d, 0.02), true);

  ps.add("enc.res.queries", {c.model.K, d}, init.normal(c.model.K * d, 1.0));
  for (std::size_t l = 0; l < c.model.resampler_layers; ++l) {
    const std::string p = "enc.res.l" + std::to_string(l) + ".";
    ps.add(p + "norm_q", {d}, Initializer::constant(d, 1.0));
    ps.add(p + "norm_kv", {d}, Initializer::constant(d, 1.0));
    ps.add(p + "wq", {d, d}, init.fan_in(d, d));
    ps.add(p + "wk", {d, d}, init.fan_in(d, d));
    ps.add(p + "wv", {d, d}, init.fan_in(d, d));
    ps.add(p + "norm_ff", {d}, Initializer::constant(d, 1.0));
    ps.add(p + "w1", {d, 2 * d}, init.fan_in(d, 2 * d));
    ps.add(p + "b1", {2 * d}, Initializer::constant(2 * d, 0.0));
    ps.add(p + "w2", {2 * d, d}, init.fan_in(2 * d, d));
    ps.add(p + "b2", {d}, Initializer::constant(d, 0.0));
  }
}

namespace detail {

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& frames, std::size_t n_frames, std::size_t frames_per_example, std::size_t res,
                      std::size_t patch, const Tensor<T>& w, const Tensor<T>& b, const Tensor<T>& pos,
                      const Tensor<T>& frame_emb) {
  const Tensor<T> patches = patchify(frames, n_frames, kChannels, res, res, patch);
  const std::size_t per_frame = (res / patch) * (res / patch);
  std::vector<std::size_t> pos_idx(n_frames * per_frame), frame_idx(n_frames * per_frame);
  for (std::size_t f = 0; f < n_frames; ++f)
    for (std::size_t p = 0; p < per_frame; ++p) {
      pos_idx[f * per_frame + p] = p;
      frame_idx[f * per_frame + p] = f % frames_per_example;
    }
  return add(add(linear(patches, w, b), gather_rows(pos, std::move(pos_idx))),
             gather_rows(frame_emb, std::move(frame_idx)));
}

}  // namespace detail

// Context frames [n_examples*H x C x R x R] -> tokens [n_examples*H*(R/p)^2 x d].
template <typename T>
Tensor<T> encode_context(const Tensor<T>& frames, std::size_t n_examples, const ParamStore<T>& ps, const RunConfig& c) {
  const std::size_t n = n_examples * c.world.H;
  return detail::patch_embed(frames, n, c.world.H, c.world.context_res, c.model.patch, ps.get("enc.ctx.patch_w"),
                             ps.get("enc.ctx.patch_b"), ps.get("enc.ctx.pos"), ps.get("enc.ctx.frame"));
}

// Frozen projector output for future frames [n_examples*n_future x C x Rf x Rf].
template <typename T>
Tensor<T> future_tokens(const Tensor<T>& frames, std::size_t n_examples, const ParamStore<T>& ps, const RunConfig& c) {
  const std::size_t n = n_examples * c.world.n_future;
  return detail::patch_embed(frames, n, c.world.n_future, c.world.future_res, c.model.future_patch,
                             ps.get("enc.fut.patch_w"), ps.get("enc.fut.patch_b"), ps.get("enc.fut.pos"),
                             ps.get("enc.fut.frame"));
}

// Cross-attention resampler: K learned queries read the future tokens of each
// example; each layer is attention followed by a residual feed-forward.
template <typename T>
Tensor<T> resample(const Tensor<T>& tokens, std::size_t n_examples, const ParamStore<T>& ps, const RunConfig& c) {
  const std::size_t K = c.model.K;
  std::vector<std::size_t> rep(n_examples * K);
  for (std::size_t i = 0; i < rep.size(); ++i) rep[i] = i % K;
  Tensor<T> lat = gather_rows(ps.get("enc.res.queries"), std::move(rep));
  for (std::size_t l = 0; l < c.model.resampler_layers; ++l) {
    const std::string p = "enc.res.l" + std::to_string(l) + ".";
    const Tensor<T> qn = rms_norm(lat, ps.get(p + "norm_q"));
    const Tensor<T> kvn = rms_norm(tokens, ps.get(p + "norm_kv"));
    const Tensor<T> a = block_attention(linear(qn, ps.get(p + "wq")), linear(kvn, ps.get(p + "wk")),
                                        linear(kvn, ps.get(p + "wv")), BoolMatrix{}, n_examples, 1);
    const Tensor<T> h = relu(linear(rms_norm(a, ps.get(p + "norm_ff")), ps.get(p + "w1"), ps.get(p + "b1")));
    lat = add(a, linear(h, ps.get(p + "w2"), ps.get(p + "b2")));
  }
  return lat;
}

// Future embeddings z_post [n_examples*K x d].
template <typename T>
Tensor<T> encode_future(const Tensor<T>& frames, std::size_t n_examples, const ParamStore<T>& ps, const RunConfig& c) {
  return resample(future_tokens(frames, n_examples, ps, c), n_examples, ps, c);
}

}  // namespace lwam
