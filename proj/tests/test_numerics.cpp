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
#include <functional>
#include <random>

#include "lwam/numerics.hpp"
#include "test_util.hpp"

namespace lwam {
namespace {

using testing::rand_const;
using testing::rand_param;
using Td = Tensor<double>;

Td backward_of(const std::function<Td()>& f) {
  Tape<double> tape;
  Td out;
  {
    auto scope = tape.activate();
    out = f();
  }
  tape.backward(out);
  return out;
}

TEST(Matmul, IdentityAndOrthogonal) {
  auto a = Td::constant({2, 2}, {1, 2, 3, 4});
  auto eye = Td::constant({2, 2}, {1, 0, 0, 1});
  auto c = matmul(a, eye);
  EXPECT_EQ(std::vector<double>(c.values().begin(), c.values().end()), (std::vector<double>{1, 2, 3, 4}));
  auto r = matmul(Td::constant({1, 2}, {1, 0}), Td::constant({2, 1}, {0, 1}));
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r[0], 0.0);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  auto a = Td::zeros({2, 3});
  auto b = Td::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto a = rand_param(rng, {3, 4});
  auto b = rand_param(rng, {4, 2});
  auto w = rand_const(rng, {3, 2});
  auto r = finite_difference_check([&] { return sum(mul(matmul(a, b), w)); }, {a, b});
  EXPECT_LE(r.rel_error, 1e-7);
}

TEST(MaskedSoftmax, Examples) {
  BoolMatrix all(1, 3, true);
  auto p = masked_softmax(Td::constant({1, 3}, {0, 0, 0}), all);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p[i], 1.0 / 3.0, 1e-15);

  BoolMatrix m(1, 3, true);
  m.set(0, 1, false);
  auto q = masked_softmax(Td::constant({1, 3}, {5, -999, 5}), m);
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_EQ(q[1], 0.0);
  EXPECT_DOUBLE_EQ(q[2], 0.5);

  auto s = masked_softmax(Td::constant({1, 2}, {1, 2}), BoolMatrix(1, 2, true));
  // logistic(-1), logistic(1)
  EXPECT_NEAR(s[0], 1.0 / (1.0 + std::exp(1.0)), 1e-15);
  EXPECT_NEAR(s[0], 0.2689414213699951, 1e-15);
  EXPECT_NEAR(s[1], 0.7310585786300049, 1e-15);
}

TEST(MaskedSoftmax, FullyMaskedRowIsAnError) {
  BoolMatrix m(2, 2, true);
  m.set(1, 0, false);
  m.set(1, 1, false);
  EXPECT_THROW(masked_softmax(Td::zeros({2, 2}), m), DimensionError);
}

TEST(MaskedSoftmax, MaskedEntriesAreExactlyZeroAndRowsSumToOne) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  for (int trial = 0; trial < 200; ++trial) {
    BoolMatrix m(4, 6);
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t j = 0; j < 6; ++j) m.set(i, j, coin(rng));
      m.set(i, trial % 6, true);
    }
    auto p = masked_softmax(rand_const(rng, {4, 6}, 30.0), m);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (!m(i, j)) EXPECT_EQ(p.at(i, j), 0.0);
        s += p.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Eigh, DiagonalCase) {
  auto r = eigh_sym(Td::constant({2, 2}, {3, 0, 0, 1}));
  EXPECT_DOUBLE_EQ(r.eigenvalues[0], 3.0);
  EXPECT_DOUBLE_EQ(r.eigenvalues[1], 1.0);
  EXPECT_DOUBLE_EQ(std::abs(r.eigenvectors.at(0, 0)), 1.0);
  EXPECT_DOUBLE_EQ(std::abs(r.eigenvectors.at(1, 1)), 1.0);
  EXPECT_DOUBLE_EQ(r.eigenvectors.at(1, 0), 0.0);
}

TEST(Eigh, AllOnesIsRankOne) {
  auto r = eigh_sym(Td::filled({3, 3}, 1.0));
  EXPECT_NEAR(r.eigenvalues[0], 3.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[1], 0.0, 1e-12);
  EXPECT_NEAR(r.eigenvalues[2], 0.0, 1e-12);
}

TEST(Eigh, NonSquareRejected) { EXPECT_THROW(eigh_sym(Td::zeros({2, 3})), DimensionError); }

TEST(Eigh, ReconstructionTraceAndResidualOnRandomMatrices) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 + trial % 7;
    auto raw = testing::randn(rng, m * m);
    std::vector<double> g(m * m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] = raw[i * m + j] + raw[j * m + i];
    auto r = eigh_sym(Td::constant({m, m}, g));
    double trace = 0, lsum = 0, gnorm = 0;
    for (std::size_t i = 0; i < m; ++i) trace += g[i * m + i];
    for (std::size_t i = 0; i < m; ++i) lsum += r.eigenvalues[i];
    for (double x : g) gnorm += x * x;
    gnorm = std::sqrt(gnorm);
    EXPECT_NEAR(trace, lsum, 1e-9);
    for (std::size_t i = 0; i + 1 < m; ++i) EXPECT_GE(r.eigenvalues[i], r.eigenvalues[i + 1]);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        double rec = 0;
        for (std::size_t k = 0; k < m; ++k) rec += r.eigenvectors.at(i, k) * r.eigenvalues[k] * r.eigenvectors.at(j, k);
        EXPECT_NEAR(rec, g[i * m + j], 1e-8);
      }
    // G u = lambda u
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < m; ++i) {
        double gu = 0;
        for (std::size_t j = 0; j < m; ++j) gu += g[i * m + j] * r.eigenvectors.at(j, k);
        EXPECT_NEAR(gu, r.eigenvalues[k] * r.eigenvectors.at(i, k), 1e-8 * gnorm);
      }
  }
}

TEST(Eigh, PsdGramHasNonNegativeSpectrum) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto h = rand_const(rng, {6, 3});
    auto r = eigh_sym(matmul(h, transpose(h)));
    for (std::size_t i = 0; i < 6; ++i) EXPECT_GE(r.eigenvalues[i], -1e-9);
  }
}

TEST(Eigh, EigenvalueGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = rand_param(rng, {5, 5});
    auto w = rand_const(rng, {5});
    auto r = finite_difference_check(
        [&] { return sum(mul(eigh_sym(add(a, transpose(a))).eigenvalues, w)); }, {a});
    EXPECT_LE(r.rel_error, 1e-6) << "trial " << trial;
  }
}

TEST(Backward, SumAndSquaredNorm) {
  auto x = Td::parameter({3}, {4, 5, 6});
  backward_of([&] { return sum(x); });
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));

  auto y = Td::parameter({2}, {1, 2});
  backward_of([&] { return sum(square(y)); });
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarRootAndSecondPassRejected) {
  auto x = Td::parameter({2}, {1, 2});
  Tape<double> tape;
  Td v, s;
  {
    auto scope = tape.activate();
    v = scale(x, 2.0);
    s = sum(v);
  }
  EXPECT_THROW(tape.backward(v), DimensionError);
  tape.backward(s);
  EXPECT_THROW(tape.backward(s), TapeError);
  EXPECT_THROW((void)tape.activate(), TapeError);
}

TEST(Backward, UnreachableTensorsHaveNoGradient) {
  auto x = Td::parameter({2}, {1, 2});
  auto unused = Td::parameter({2}, {3, 4});
  backward_of([&] { return sum(x); });
  EXPECT_FALSE(unused.has_grad());
}

TEST(Backward, NoTapeMeansNoRecording) {
  auto x = Td::parameter({2}, {1, 2});
  auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
}

// Every primitive against central finite differences.
class PrimitiveGradients : public ::testing::TestWithParam<int> {};

TEST_P(PrimitiveGradients, MatchFiniteDifferences) {
  std::mt19937_64 rng(1000 + GetParam());
  auto x = rand_param(rng, {4, 6});
  auto y = rand_param(rng, {4, 6});
  auto w = rand_param(rng, {6, 3});
  auto b = rand_param(rng, {3});
  auto g = rand_param(rng, {6});
  auto pos = Td::parameter({4, 6}, [&] {
    auto v = testing::randn(rng, 24);
    for (auto& e : v) e = 0.5 + std::abs(e);
    return v;
  }());
  auto probe = rand_const(rng, {4, 6});
  auto probe3 = rand_const(rng, {4, 3});
  auto check = [&](const char* name, std::function<Td()> f, std::vector<Td> in) {
    auto r = finite_difference_check(f, in);
    EXPECT_LE(r.rel_error, 1e-5) << name;
  };
  check("add", [&] { return sum(mul(add(x, y), probe)); }, {x, y});
  check("sub", [&] { return sum(mul(sub(x, y), probe)); }, {x, y});
  check("mul", [&] { return sum(mul(mul(x, y), probe)); }, {x, y});
  check("relu", [&] { return sum(mul(relu(x), probe)); }, {x});
  check("exp", [&] { return sum(mul(exp(scale(x, 0.3)), probe)); }, {x});
  check("log", [&] { return sum(mul(log(pos), probe)); }, {pos});
  check("sqrt", [&] { return sum(mul(sqrt(pos), probe)); }, {pos});
  check("xlogx", [&] { return sum(mul(xlogx(pos), probe)); }, {pos});
  check("mean", [&] { return mean(mul(x, probe)); }, {x});
  check("linear", [&] { return sum(mul(linear(x, w, b), probe3)); }, {x, w, b});
  check("rms_norm", [&] { return sum(mul(rms_norm(x, g), probe)); }, {x, g});
  check("row_norms", [&] { return sum(row_norms(x)); }, {x});
  check("row_normalize", [&] { return sum(mul(row_normalize(x), probe)); }, {x});
  check("l2_norm", [&] { return l2_norm(x); }, {x});
  check("embedding_lookup", [&] { return sum(mul(embedding_lookup(x, {3, 0, 3, 1}), probe)); }, {x});
  check("concatenate", [&] { return sum(mul(concatenate<double>({slice(x, 0, 2), slice(y, 2, 4)}), probe)); }, {x, y});
  check("transpose", [&] { return sum(mul(transpose(transpose(x)), probe)); }, {x});
  check("div_scalar", [&] { return sum(mul(div_scalar(x, sum(pos)), probe)); }, {x, pos});
  check("masked_softmax", [&] {
    BoolMatrix m(4, 6, true);
    m.set(0, 1, false);
    m.set(2, 5, false);
    return sum(mul(masked_softmax(x, m), probe));
  }, {x});
  check("rope", [&] { return sum(mul(rope(x, {0, 3, 7, 2}, 1), probe)); }, {x});
  check("block_attention", [&] {
    BoolMatrix m(2, 2, true);
    m.set(0, 1, false);
    return sum(mul(block_attention(x, y, scale(x, 0.5), m, 2, 2), probe));
  }, {x, y});
  check("patchify", [&] { return sum(mul(patchify(x, 1, 1, 4, 6, 2), reshape(probe, {6, 4}))); }, {x});
}

INSTANTIATE_TEST_SUITE_P(Seeds, PrimitiveGradients, ::testing::Range(0, 10));

TEST(Determinism, IdenticalInputsGiveBitwiseIdenticalGradients) {
  auto run = [] {
    std::mt19937_64 rng(77);
    auto x = rand_param(rng, {5, 8});
    auto w = rand_param(rng, {8, 8});
    backward_of([&] { return sum(square(block_attention(linear(x, w), x, x, BoolMatrix{}, 1, 2))); });
    std::vector<double> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

}  // namespace
}  // namespace lwam
