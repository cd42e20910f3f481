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

#include "lwam/objectives.hpp"
#include "test_util.hpp"

namespace lwam {
namespace {

using Td = Tensor<double>;
using testing::rand_const;
using testing::rand_param;

Td eye(std::size_t n) {
  auto t = Td::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_values()[i * n + i] = 1.0;
  return t;
}

TEST(FlowSample, Endpoints) {
  const std::vector<double> a = {0.3, -0.2, 1.0, 0.5}, eps = {1.0, 2.0, -1.0, 0.0};
  auto s1 = make_flow_sample(a, 1.0, eps);
  EXPECT_EQ(s1.a_t, a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(s1.u_t[i], a[i] - eps[i]);
  auto s0 = make_flow_sample(a, 0.0, eps);
  EXPECT_EQ(s0.a_t, eps);
}

TEST(FlowSample, MidpointExample) {
  auto s = make_flow_sample({1, 0}, 0.5, {0, 1});
  EXPECT_EQ(s.a_t, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(s.u_t, (std::vector<double>{1, -1}));
}

TEST(FlowSample, TimeOutsideUnitIntervalRejected) {
  EXPECT_THROW(make_flow_sample({1}, 1.5, {0}), std::domain_error);
  EXPECT_THROW(make_flow_sample({1}, -0.1, {0}), std::domain_error);
  EXPECT_THROW(make_flow_sample({1}, std::nan(""), {0}), std::domain_error);
}

TEST(FmLoss, Examples) {
  std::mt19937_64 rng(1);
  auto u = rand_const(rng, {4, 2});
  EXPECT_EQ(fm_loss(u, u).item(), 0.0);
  EXPECT_DOUBLE_EQ(fm_loss(affine(u, 1.0, 1.0), u).item(), 1.0);
  EXPECT_THROW(fm_loss(u, Td::zeros({2, 4})), DimensionError);
}

TEST(FmLoss, MatchesIndependentImplementation) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = rand_const(rng, {8, 2}), u = rand_const(rng, {8, 2});
    double ref = 0;
    for (std::size_t i = 0; i < 16; ++i) ref += (v[i] - u[i]) * (v[i] - u[i]);
    EXPECT_NEAR(fm_loss(v, u).item(), ref / 16.0, 1e-12);
  }
}

AlignmentTaps<double> taps_of(std::vector<Td> prior, std::vector<Td> post) {
  AlignmentTaps<double> t;
  t.prior = std::move(prior);
  t.post = std::move(post);
  return t;
}

TEST(AlignLoss, Examples) {
  std::mt19937_64 rng(3);
  auto h = rand_const(rng, {3, 4});
  EXPECT_EQ(align_loss(taps_of({h, h}, {h, h})).item(), 0.0);
  for (std::size_t L = 1; L <= 3; ++L) {
    std::vector<Td> zero(L, Td::zeros({2, 3})), val(L, Td::filled({2, 3}, 0.7));
    EXPECT_NEAR(align_loss(taps_of(zero, val)).item(), 0.49, 1e-15);
  }
  auto hand = taps_of({Td::constant({1, 2}, {1, 2}), Td::constant({1, 2}, {0, 0})},
                      {Td::constant({1, 2}, {1, 0}), Td::constant({1, 2}, {2, 0})});
  EXPECT_NEAR(align_loss(hand).item(), 2.0, 1e-12);
}

TEST(AlignLoss, SymmetricAndShapeChecked) {
  std::mt19937_64 rng(4);
  auto a = rand_const(rng, {2, 3}), b = rand_const(rng, {2, 3});
  EXPECT_EQ(align_loss(taps_of({a}, {b})).item(), align_loss(taps_of({b}, {a})).item());
  EXPECT_THROW(align_loss(taps_of({a}, {Td::zeros({3, 2})})), DimensionError);
  EXPECT_THROW(align_loss(taps_of({a, a}, {a})), DimensionError);
}

TEST(AlignLoss, StopPosteriorBlocksPosteriorGradient) {
  std::mt19937_64 rng(5);
  auto a = rand_param(rng, {2, 3}), b = rand_param(rng, {2, 3});
  Tape<double> tape;
  Td loss;
  {
    auto scope = tape.activate();
    loss = align_loss(taps_of({a}, {b}), true);
  }
  tape.backward(loss);
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
}

TEST(NormReg, HingeCases) {
  const double tau = 2.0;
  EXPECT_EQ(norm_reg<double>({Td::constant({2, 2}, {3, 0, 0, -2})}, tau).item(), 0.0);
  EXPECT_EQ(norm_reg<double>({Td::zeros({1, 3})}, tau).item(), tau * tau);
  EXPECT_DOUBLE_EQ(norm_reg<double>({Td::constant({1, 2}, {0.6, 0.8})}, tau).item(), tau * tau / 4.0);
  EXPECT_THROW(norm_reg<double>({Td::zeros({1, 3})}, 0.0), std::domain_error);
}

TEST(NormReg, MonotoneBelowThreshold) {
  const double tau = 1.5;
  double prev = 1e9;
  for (double r = 0.0; r <= 2.0; r += 0.05) {
    const double v = norm_reg<double>({Td::constant({1, 2}, {r, 0.0}), Td::constant({1, 2}, {0.0, 3.0})}, tau).item();
    EXPECT_LE(v, prev);
    EXPECT_EQ(v == 0.0, r >= tau);
    prev = v;
  }
}

TEST(RankReg, AnalyticCases) {
  std::mt19937_64 rng(6);
  EXPECT_EQ(rank_reg(rand_const(rng, {1, 4}), rand_const(rng, {4, 3})).item(), 0.0);
  auto row = testing::randn(rng, 4);
  std::vector<double> same;
  for (int i = 0; i < 3; ++i) same.insert(same.end(), row.begin(), row.end());
  EXPECT_NEAR(rank_reg(Td::constant({3, 4}, same), eye(4)).item(), 0.0, 1e-12);
  EXPECT_NEAR(rank_reg(eye(3), eye(3)).item(), -std::log(3.0), 1e-9);
  EXPECT_EQ(rank_reg(Td::zeros({3, 4}), eye(4)).item(), 0.0);
}

TEST(RankReg, BoundedByLogM) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> dm(1, 12), dn(1, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t M = dm(rng), n = dn(rng), d = 6;
    const double r = rank_reg(rand_const(rng, {M, d}), rand_const(rng, {d, n})).item();
    EXPECT_LE(r, 1e-12);
    EXPECT_GE(r, -std::log(double(M)) - 1e-12);
  }
}

TEST(RankReg, DualGramMatchesDirectGram) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = rand_const(rng, {12, 6});
    auto p = rand_const(rng, {6, 4});
    EXPECT_NEAR(rank_reg(s, p, true).item(), rank_reg(s, p, false).item(), 1e-10);
  }
}

TEST(RankReg, SpectrumProbabilitiesSumToOne) {
  std::mt19937_64 rng(9);
  auto h = row_normalize(matmul(rand_const(rng, {5, 6}), rand_const(rng, {6, 6})));
  auto lambda = relu(eigh_sym(matmul(h, transpose(h))).eigenvalues);
  auto p = div_scalar(lambda, sum(lambda));
  EXPECT_NEAR(sum(p).item(), 1.0, 1e-12);
}

TEST(TotalLoss, Examples) {
  auto one = Td::scalar(1.0), zero = Td::scalar(0.0);
  LossWeights w;
  EXPECT_EQ(total_loss(zero, zero, zero, zero, zero, w, TrainMode::Pretrain).item(), 0.0);
  EXPECT_NEAR(total_loss(one, one, one, one, one, w, TrainMode::Pretrain).item(), 2.0 + 1e-3 + 2e-4, 1e-15);
  EXPECT_NEAR(total_loss(one, one, one, one, one, w, TrainMode::Posttrain).item(), 2.0 + 1e-3, 1e-15);
}

TEST(TotalLoss, PosttrainNeverTouchesRegularizers) {
  auto one = Td::scalar(1.0);
  auto norm = Td::parameter({}, {1.0}), rank = Td::parameter({}, {1.0}), fm = Td::parameter({}, {0.5});
  Tape<double> tape;
  Td loss;
  {
    auto scope = tape.activate();
    loss = total_loss(fm, one, one, scale(norm, 1.0), scale(rank, 1.0), LossWeights{}, TrainMode::Posttrain);
  }
  tape.backward(loss);
  EXPECT_TRUE(fm.has_grad());
  EXPECT_FALSE(norm.has_grad());
  EXPECT_FALSE(rank.has_grad());
}

// Loss terms on raw random tensors against finite differences; the
// micro-model versions live in the trainer tests.
class LossGradients : public ::testing::TestWithParam<int> {};

TEST_P(LossGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(500 + GetParam());
  auto v = rand_param(rng, {6, 2});
  auto u = rand_const(rng, {6, 2});
  EXPECT_LE(finite_difference_check([&] { return fm_loss(v, u); }, {v}).rel_error, 1e-5);

  auto p1 = rand_param(rng, {3, 4}), p2 = rand_param(rng, {3, 4}), q1 = rand_param(rng, {3, 4}),
       q2 = rand_param(rng, {3, 4});
  EXPECT_LE(finite_difference_check([&] { return align_loss(taps_of({p1, p2}, {q1, q2})); }, {p1, p2, q1, q2})
                .rel_error,
            1e-5);

  auto h = rand_param(rng, {5, 4});
  EXPECT_LE(finite_difference_check([&] { return norm_reg<double>({h, p1}, 2.5); }, {h, p1}).rel_error, 1e-5);

  auto s = rand_param(rng, {5, 6});
  auto proj = rand_const(rng, {6, 6}, 1.0 / std::sqrt(6.0));
  EXPECT_LE(finite_difference_check([&] { return rank_reg(s, proj); }, {s}).rel_error, 1e-5);
  auto tall = rand_param(rng, {9, 6});
  auto narrow = rand_const(rng, {6, 3});
  EXPECT_LE(finite_difference_check([&] { return rank_reg(tall, narrow); }, {tall}).rel_error, 1e-5);
}

INSTANTIATE_TEST_SUITE_P(Seeds, LossGradients, ::testing::Range(0, 50));

}  // namespace
}  // namespace lwam
