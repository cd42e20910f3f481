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

#include <stdexcept>
#include <vector>

#include "lwam/backbone.hpp"
#include "lwam/numerics.hpp"

namespace lwam {

// One point on the linear path between noise and data.
struct FlowSample {
  double t = 0.0;
  std::vector<double> eps;  // [T*A]
  std::vector<double> a_t;  // t*a + (1-t)*eps
  std::vector<double> u_t;  // a - eps
};

inline FlowSample make_flow_sample(const std::vector<double>& a, double t, std::vector<double> eps) {
  if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("make_flow_sample: flow time " + std::to_string(t) + " outside [0, 1]");
  if (a.size() != eps.size()) throw DimensionError("make_flow_sample: action and noise sizes differ");
  FlowSample s;
  s.t = t;
  s.a_t.resize(a.size());
  s.u_t.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    s.a_t[i] = t * a[i] + (1.0 - t) * eps[i];
    s.u_t[i] = a[i] - eps[i];
  }
  s.eps = std::move(eps);
  return s;
}

struct LossWeights {
  double w_align = 1e-3;
  double w_norm = 1e-4;
  double w_rank = 1e-4;
};

// Element-mean squared error between predicted and target velocity.
template <typename T>
Tensor<T> fm_loss(const Tensor<T>& v_pred, const Tensor<T>& u_t) {
  if (v_pred.shape() != u_t.shape())
    throw DimensionError("fm_loss: prediction " + shape_str(v_pred.shape()) + " vs target " + shape_str(u_t.shape()));
  return mean(square(sub(v_pred, u_t)));
}

// Layer-averaged, element-normalized squared Frobenius distance between
// matched prior and posterior latent states.
template <typename T>
Tensor<T> align_loss(const AlignmentTaps<T>& taps, bool stop_posterior = false) {
  if (taps.prior.size() != taps.post.size() || taps.prior.empty())
    throw DimensionError("align_loss: prior/posterior tap counts differ or are empty");
  std::vector<Tensor<T>> per_layer;
  for (std::size_t l = 0; l < taps.prior.size(); ++l) {
    if (taps.prior[l].shape() != taps.post[l].shape())
      throw DimensionError("align_loss: layer " + std::to_string(l) + " tap shapes " + shape_str(taps.prior[l].shape()) +
                           " vs " + shape_str(taps.post[l].shape()));
    const Tensor<T> post = stop_posterior ? taps.post[l].detach() : taps.post[l];
    per_layer.push_back(mean(square(sub(taps.prior[l], post))));
  }
  return scale(add_scalars(per_layer), T{1} / static_cast<T>(per_layer.size()));
}

// Mean over all latent rows of relu(tau - ||h||)^2.
template <typename T>
Tensor<T> norm_reg(const std::vector<Tensor<T>>& latent_states, T tau) {
  if (!(tau > T{0})) throw std::domain_error("norm_reg: tau must be positive");
  if (latent_states.empty()) return Tensor<T>::scalar(T{0});
  const Tensor<T> rows = latent_states.size() == 1 ? latent_states.front() : concatenate(latent_states);
  return mean(square(relu(affine(row_norms(rows), T{-1}, tau))));
}

// Negative spectral entropy sum_i p_i log p_i of the Gram matrix of the
// row-normalized projected states. When M exceeds the projection width the
// n x n Gram H^T H is decomposed instead; its nonzero spectrum is identical.
template <typename T>
Tensor<T> rank_reg(const Tensor<T>& states, const Tensor<T>& proj, bool allow_dual_gram = true) {
  const Tensor<T> h = row_normalize(matmul(states, proj));
  const std::size_t m = h.shape()[0], n = h.shape()[1];
  const Tensor<T> gram = (allow_dual_gram && m > n) ? matmul(transpose(h), h) : matmul(h, transpose(h));
  const Tensor<T> lambda = relu(eigh_sym(gram).eigenvalues);
  const Tensor<T> total = sum(lambda);
  if (!(total.item() > T{0})) return Tensor<T>::scalar(T{0});
  return sum(xlogx(div_scalar(lambda, total)));
}

enum class TrainMode { Pretrain, Posttrain };

struct LossComponents {
  double fm_prior = 0, fm_post = 0, align = 0, norm = 0, rank = 0, total = 0;
};

// (fm_prior + fm_post) + w_align*align + (w_norm*norm + w_rank*rank); post-training
// drops the regularizer term. Undefined components count as absent.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& fm_prior, const Tensor<T>& fm_post, const Tensor<T>& align,
                     const Tensor<T>& norm, const Tensor<T>& rank, const LossWeights& w, TrainMode mode) {
  std::vector<Tensor<T>> terms;
  if (fm_prior.defined()) terms.push_back(fm_prior);
  if (fm_post.defined()) terms.push_back(fm_post);
  if (align.defined()) terms.push_back(scale(align, static_cast<T>(w.w_align)));
  if (mode == TrainMode::Pretrain) {
    std::vector<Tensor<T>> reg;
    if (norm.defined()) reg.push_back(scale(norm, static_cast<T>(w.w_norm)));
    if (rank.defined()) reg.push_back(scale(rank, static_cast<T>(w.w_rank)));
    if (!reg.empty()) terms.push_back(add_scalars(reg));
  }
  return add_scalars(terms);
}

}  // namespace lwam
