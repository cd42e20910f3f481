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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lwam/encoders.hpp"
#include "test_util.hpp"

namespace lwam {
namespace {

using Td = Tensor<double>;

RunConfig encoder_config() {
  RunConfig c;
  c.model.d = 8;
  c.model.n_heads = 2;
  c.model.K = 3;
  return c;
}

ParamStore<double> encoder_params(const RunConfig& c, std::uint64_t seed = 5) {
  ParamStore<double> ps;
  Initializer init(seed);
  init_encoder_params(ps, c, init);
  return ps;
}

TEST(EncodeContext, TokenCount) {
  auto c = encoder_config();
  auto ps = encoder_params(c);
  auto frames = Td::zeros({2, 3 * 16 * 16});
  auto tok = encode_context(frames, 1, ps, c);
  EXPECT_EQ(tok.shape(), (Shape{8, 8}));
}

TEST(EncodeContext, ZeroFramesGivePositionalEmbeddingsExactly) {
  auto c = encoder_config();
  auto ps = encoder_params(c);
  auto tok = encode_context(Td::zeros({2, 3 * 16 * 16}), 1, ps, c);
  const auto& pos = ps.get("enc.ctx.pos");
  const auto& frame = ps.get("enc.ctx.frame");
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(tok.at(f * 4 + p, j), pos.at(p, j) + frame.at(f, j));
}

TEST(EncodeContext, NonDivisibleFramesRejected) {
  auto c = encoder_config();
  auto ps = encoder_params(c);
  c.world.context_res = 12;
  EXPECT_THROW(encode_context(Td::zeros({2, 3 * 12 * 12}), 1, ps, c), DimensionError);
}

TEST(EncodeContext, PixelGradientMatchesFiniteDifferences) {
  auto c = encoder_config();
  c.world.context_res = 4;
  c.model.patch = 2;
  ParamStore<double> ps;
  Initializer init(3);
  init_encoder_params(ps, c, init);
  std::mt19937_64 rng(8);
  auto frames = testing::rand_param(rng, {2, 3 * 4 * 4});
  auto r = finite_difference_check([&] { return mean(encode_context(frames, 1, ps, c)); }, {frames});
  EXPECT_LE(r.rel_error, 1e-5);
  auto r2 = finite_difference_check(
      [&] { return mean(square(encode_context(frames, 1, ps, c))); },
      {frames, ps.get("enc.ctx.patch_w"), ps.get("enc.ctx.pos")});
  EXPECT_LE(r2.rel_error, 1e-5);
}

TEST(EncodeFuture, ShapeMatchesLatentBankForAnyFutureCount) {
  for (std::uint32_t nf = 1; nf <= 4; ++nf) {
    auto c = encoder_config();
    c.world.n_future = nf;
    auto ps = encoder_params(c);
    std::mt19937_64 rng(nf);
    auto frames = testing::rand_const(rng, {2 * nf, 3 * 16 * 16});
    auto z = encode_future(frames, 2, ps, c);
    EXPECT_EQ(z.shape(), (Shape{2 * 3, 8}));
  }
}

TEST(EncodeFuture, FrozenProjectorIsConstantAndRepeatable) {
  auto c = encoder_config();
  auto ps = encoder_params(c);
  for (const char* n : {"enc.fut.patch_w", "enc.fut.patch_b", "enc.fut.pos", "enc.fut.frame"})
    EXPECT_FALSE(ps.get(n).requires_grad()) << n;
  const auto before = ps.checksum(true);
  std::mt19937_64 rng(1);
  auto frames = testing::rand_const(rng, {4, 3 * 16 * 16});
  auto run = [&] {
    Tape<double> tape;
    Td tok, loss;
    {
      auto scope = tape.activate();
      tok = future_tokens(frames, 1, ps, c);
      loss = mean(square(resample(tok, 1, ps, c)));
    }
    tape.backward(loss);
    return std::vector<double>(tok.values().begin(), tok.values().end());
  };
  EXPECT_EQ(run(), run());
  EXPECT_EQ(ps.checksum(true), before);
  EXPECT_TRUE(ps.get("enc.res.queries").has_grad());
  EXPECT_FALSE(ps.get("enc.fut.patch_w").has_grad());
  // Frozen weights depend only on the frozen seed.
  EXPECT_EQ(encoder_params(c, 99).checksum(true), before);
}

// With a single future token, attention weights are exactly one, so each
// latent equals FFN(Wv * rms(token)).
TEST(EncodeFuture, SingleTokenClosedForm) {
  auto c = encoder_config();
  c.world.n_future = 1;
  c.world.future_res = 4;
  c.model.future_patch = 4;
  c.model.resampler_layers = 1;
  ParamStore<double> ps;
  Initializer init(17);
  init_encoder_params(ps, c, init);
  // Non-trivial norm gains.
  std::mt19937_64 rng(2);
  for (const char* n : {"enc.res.l0.norm_kv", "enc.res.l0.norm_ff", "enc.res.l0.b1", "enc.res.l0.b2"}) {
    Td t = ps.get(n);
    auto v = testing::randn(rng, t.size(), 0.5);
    std::copy(v.begin(), v.end(), t.mutable_values().begin());
  }
  auto frames = testing::rand_const(rng, {1, 3 * 4 * 4});
  const Td tok = future_tokens(frames, 1, ps, c);
  ASSERT_EQ(tok.shape(), (Shape{1, 8}));
  const Td z = encode_future(frames, 1, ps, c);
  ASSERT_EQ(z.shape(), (Shape{3, 8}));

  const std::size_t d = 8;
  auto rms = [&](std::vector<double> x, const Td& g) {
    double ss = 0;
    for (double e : x) ss += e * e;
    const double inv = 1.0 / std::sqrt(ss / d + 1e-6);
    for (std::size_t j = 0; j < d; ++j) x[j] *= inv * g[j];
    return x;
  };
  auto matvec = [](const std::vector<double>& x, const Td& w, std::size_t out) {
    std::vector<double> y(out, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < out; ++j) y[j] += x[i] * w.at(i, j);
    return y;
  };
  const auto tn = rms(std::vector<double>(tok.values().begin(), tok.values().end()), ps.get("enc.res.l0.norm_kv"));
  const auto a = matvec(tn, ps.get("enc.res.l0.wv"), d);
  auto h = matvec(rms(a, ps.get("enc.res.l0.norm_ff")), ps.get("enc.res.l0.w1"), 2 * d);
  for (std::size_t j = 0; j < 2 * d; ++j) h[j] = std::max(0.0, h[j] + ps.get("enc.res.l0.b1")[j]);
  auto f = matvec(h, ps.get("enc.res.l0.w2"), d);
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(z.at(k, j), a[j] + f[j] + ps.get("enc.res.l0.b2")[j], 1e-12);
}

TEST(FrameStack, ValidatesSizesAndOffsets) {
  FrameStack s;
  s.n_frames = 2;
  s.height = s.width = 4;
  s.frames.assign(2 * 3 * 16, 0.0f);
  s.frame_times = {0, 2};
  EXPECT_NO_THROW(s.validate());
  s.frame_times = {2, 2};
  EXPECT_THROW(s.validate(), DimensionError);
  s.frame_times.clear();
  s.frames.pop_back();
  EXPECT_THROW(s.validate(), DimensionError);
}

}  // namespace
}  // namespace lwam
