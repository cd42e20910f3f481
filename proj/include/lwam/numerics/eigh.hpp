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
#include <numeric>
#include <span>
#include <vector>

#include "lwam/numerics/ops.hpp"

namespace lwam {

struct JacobiOptions {
  double tolerance = 1e-12;  // off-diagonal Frobenius norm relative to ||A||_F
  int max_sweeps = 100;
};

template <typename T>
struct SymmetricEigen {
  std::vector<T> values;   // descending
  std::vector<T> vectors;  // row-major [m x m], column i is the i-th eigenvector
  int sweeps = 0;
};

// Cyclic Jacobi eigen-decomposition of (a + a^T) / 2, a row-major [m x m].
template <typename T>
SymmetricEigen<T> jacobi_eigen(std::span<const T> a_in, std::size_t m, JacobiOptions opts = {}) {
  std::vector<T> a(m * m), v(m * m, T{0});
  for (std::size_t i = 0; i < m; ++i) {
    v[i * m + i] = T{1};
    for (std::size_t j = 0; j < m; ++j) a[i * m + j] = (a_in[i * m + j] + a_in[j * m + i]) / T{2};
  }
  T fro{0};
  for (T x : a) fro += x * x;
  fro = std::sqrt(fro);
  const T limit = static_cast<T>(opts.tolerance) * fro;

  SymmetricEigen<T> out;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    T off{0};
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) off += a[i * m + j] * a[i * m + j];
    if (std::sqrt(off) <= limit) break;
    out.sweeps = sweep + 1;
    for (std::size_t p = 0; p + 1 < m; ++p) {
      for (std::size_t q = p + 1; q < m; ++q) {
        const T apq = a[p * m + q];
        if (apq == T{0}) continue;
        const T theta = (a[q * m + q] - a[p * m + p]) / (T{2} * apq);
        const T t = (theta >= T{0} ? T{1} : T{-1}) / (std::abs(theta) + std::sqrt(T{1} + theta * theta));
        const T c = T{1} / std::sqrt(T{1} + t * t);
        const T s = t * c;
        for (std::size_t k = 0; k < m; ++k) {
          const T akp = a[k * m + p], akq = a[k * m + q];
          a[k * m + p] = c * akp - s * akq;
          a[k * m + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < m; ++k) {
          const T apk = a[p * m + k], aqk = a[q * m + k];
          a[p * m + k] = c * apk - s * aqk;
          a[q * m + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < m; ++k) {
          const T vkp = v[k * m + p], vkq = v[k * m + q];
          v[k * m + p] = c * vkp - s * vkq;
          v[k * m + q] = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x * m + x] > a[y * m + y]; });
  out.values.resize(m);
  out.vectors.resize(m * m);
  for (std::size_t i = 0; i < m; ++i) {
    out.values[i] = a[order[i] * m + order[i]];
    for (std::size_t k = 0; k < m; ++k) out.vectors[k * m + i] = v[k * m + order[i]];
  }
  return out;
}

template <typename T>
struct EighResult {
  Tensor<T> eigenvalues;   // [m], descending, differentiable
  Tensor<T> eigenvectors;  // [m x m], constant
};

// Differentiable symmetric eigensolver. Only eigenvalues carry gradients:
// d(lambda_i) = u_i^T dG u_i.
template <typename T>
EighResult<T> eigh_sym(const Tensor<T>& g, JacobiOptions opts = {}) {
  if (g.rank() != 2 || g.shape()[0] != g.shape()[1])
    throw DimensionError("eigh_sym: expected a square matrix, got " + shape_str(g.shape()));
  const std::size_t m = g.shape()[0];
  SymmetricEigen<T> eig = jacobi_eigen<T>(g.values(), m, opts);
  auto vectors = Tensor<T>::constant({m, m}, eig.vectors);
  auto values = detail::make_result<T>({m}, Buffer<T>(eig.values.begin(), eig.values.end()), {g}, [m, u = std::move(eig.vectors)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* grad = p.grad_buffer();
    // dG = U diag(dlambda) U^T
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < m; ++c) {
        T acc{0};
        for (std::size_t i = 0; i < m; ++i) acc += u[r * m + i] * self.grad[i] * u[c * m + i];
        grad[r * m + c] += acc;
      }
  });
  return {std::move(values), std::move(vectors)};
}

}  // namespace lwam
