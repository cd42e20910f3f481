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

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "lwam/numerics/tensor.hpp"

namespace lwam {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

template <typename T>
ConstMatMap<T> cmap(const Buffer<T>& v, std::size_t r, std::size_t c) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
template <typename T>
MatMap<T> mmap(T* p, std::size_t r, std::size_t c) {
  return MatMap<T>(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

template <typename T, typename F, typename G>
Tensor<T> unary(const Tensor<T>& x, F forward, G derivative) {
  Buffer<T> out(x.size());
  const auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = forward(in[i]);
  return make_result<T>(x.shape(), std::move(out), {x}, [derivative](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * derivative(p.value[i], self.value[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!detail::wants_grad(self, k)) continue;
      T* g = self.parents[k]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    if (detail::wants_grad(self, 0)) {
      T* g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (detail::wants_grad(self, 1)) {
      T* g = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Buffer<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result<T>(a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

// scale * x + shift with constant coefficients.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T{0}) {
  return detail::unary(
      x, [=](T v) { return scale * v + shift; }, [=](T, T) { return scale; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return affine(x, s, T{0});
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T{1} / v; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return std::sqrt(v); }, [](T, T y) { return T{0.5} / y; });
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T{2} * v; });
}

// x log x with the convention 0 log 0 = 0 (and zero subgradient there).
template <typename T>
Tensor<T> xlogx(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > T{0} ? v * std::log(v) : T{0}; },
      [](T v, T) { return v > T{0} ? std::log(v) + T{1} : T{0}; });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s{0};
  for (T v : x.values()) s += v;
  return detail::make_result<T>({}, {s}, {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

// Scalar sum of a list of scalars.
template <typename T>
Tensor<T> add_scalars(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) return Tensor<T>::scalar(T{0});
  Tensor<T> acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// x / s for a scalar tensor s.
template <typename T>
Tensor<T> div_scalar(const Tensor<T>& x, const Tensor<T>& s) {
  if (s.size() != 1) throw DimensionError("div_scalar: divisor must be scalar, got " + shape_str(s.shape()));
  const T d = s.item();
  Buffer<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] / d;
  return detail::make_result<T>(x.shape(), std::move(out), {x, s}, [](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& ps = *self.parents[1];
    const T d = ps.value[0];
    if (px.requires_grad) {
      T* g = px.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] / d;
    }
    if (ps.requires_grad) {
      T acc{0};
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * px.value[i];
      ps.grad_buffer()[0] -= acc / (d * d);
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k)
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  Buffer<T> out(m * n);
  detail::mmap(out.data(), m, n).noalias() =
      detail::cmap(a.node().value, m, k) * detail::cmap(b.node().value, k, n);
  return detail::make_result<T>({m, n}, std::move(out), {a, b}, [m, k, n](Node<T>& self) {
    Node<T>& pa = *self.parents[0];
    Node<T>& pb = *self.parents[1];
    auto dc = detail::cmap(self.grad, m, n);
    if (pa.requires_grad) detail::mmap(pa.grad_buffer(), m, k).noalias() += dc * detail::cmap(pb.value, k, n).transpose();
    if (pb.requires_grad) detail::mmap(pb.grad_buffer(), k, n).noalias() += detail::cmap(pa.value, m, k).transpose() * dc;
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Buffer<T> out(m * n);
  detail::mmap(out.data(), n, m) = detail::cmap(a.node().value, m, n).transpose();
  return detail::make_result<T>({n, m}, std::move(out), {a}, [m, n](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    detail::mmap(p.grad_buffer(), m, n) += detail::cmap(self.grad, n, m).transpose();
  });
}

// x[r x in] * w[in x out] + b[out]. The bias may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {}) {
  detail::require_matrix(x, "linear");
  detail::require_matrix(w, "linear");
  const std::size_t r = x.shape()[0], in = x.shape()[1], out_dim = w.shape()[1];
  if (w.shape()[0] != in)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  if (b.defined() && b.size() != out_dim)
    throw DimensionError("linear: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  Buffer<T> out(r * out_dim);
  auto y = detail::mmap(out.data(), r, out_dim);
  y.noalias() = detail::cmap(x.node().value, r, in) * detail::cmap(w.node().value, in, out_dim);
  if (b.defined()) y.rowwise() += detail::cmap(b.node().value, 1, out_dim).row(0);
  std::vector<Tensor<T>> parents{x, w};
  if (b.defined()) parents.push_back(b);
  return detail::make_result<T>({r, out_dim}, std::move(out), std::move(parents), [r, in, out_dim](Node<T>& self) {
    auto dy = detail::cmap(self.grad, r, out_dim);
    Node<T>& px = *self.parents[0];
    Node<T>& pw = *self.parents[1];
    if (px.requires_grad) detail::mmap(px.grad_buffer(), r, in).noalias() += dy * detail::cmap(pw.value, in, out_dim).transpose();
    if (pw.requires_grad) detail::mmap(pw.grad_buffer(), in, out_dim).noalias() += detail::cmap(px.value, r, in).transpose() * dy;
    if (self.parents.size() > 2 && self.parents[2]->requires_grad)
      detail::mmap(self.parents[2]->grad_buffer(), 1, out_dim) += dy.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Row-wise normalization

// y = x / rms(x) * gain per row.
template <typename T>
Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps = T{1e-6}) {
  detail::require_matrix(x, "rms_norm");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  if (gain.size() != c) throw DimensionError("rms_norm: gain " + shape_str(gain.shape()) + " vs input " + shape_str(x.shape()));
  Buffer<T> out(r * c), inv(r);
  for (std::size_t i = 0; i < r; ++i) {
    T ms{0};
    for (std::size_t j = 0; j < c; ++j) ms += x[i * c + j] * x[i * c + j];
    inv[i] = T{1} / std::sqrt(ms / static_cast<T>(c) + eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] * inv[i] * gain[j];
  }
  return detail::make_result<T>({r, c}, std::move(out), {x, gain}, [r, c, inv = std::move(inv)](Node<T>& self) {
    Node<T>& px = *self.parents[0];
    Node<T>& pg = *self.parents[1];
    T* gx = px.requires_grad ? px.grad_buffer() : nullptr;
    T* gg = pg.requires_grad ? pg.grad_buffer() : nullptr;
    for (std::size_t i = 0; i < r; ++i) {
      const T* xi = px.value.data() + i * c;
      const T* dy = self.grad.data() + i * c;
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) {
        const T xhat = xi[j] * inv[i];
        if (gg) gg[j] += dy[j] * xhat;
        dot += dy[j] * pg.value[j] * xhat;
      }
      if (!gx) continue;
      dot /= static_cast<T>(c);
      for (std::size_t j = 0; j < c; ++j)
        gx[i * c + j] += inv[i] * (dy[j] * pg.value[j] - xi[j] * inv[i] * dot);
    }
  });
}

// Euclidean norm of each row -> [r]. Zero rows have zero subgradient.
template <typename T>
Tensor<T> row_norms(const Tensor<T>& x) {
  detail::require_matrix(x, "row_norms");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Buffer<T> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s{0};
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    out[i] = std::sqrt(s);
  }
  return detail::make_result<T>({r}, std::move(out), {x}, [r, c](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      const T n = self.value[i];
      if (n == T{0}) continue;
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i] * p.value[i * c + j] / n;
    }
  });
}

// Frobenius norm of the whole tensor as a scalar.
template <typename T>
Tensor<T> l2_norm(const Tensor<T>& x) {
  return sqrt(sum(square(x)));
}

// Scales each row to unit norm; zero rows stay zero.
template <typename T>
Tensor<T> row_normalize(const Tensor<T>& x) {
  detail::require_matrix(x, "row_normalize");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Buffer<T> out(r * c), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    T s{0};
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    norms[i] = std::sqrt(s);
    if (norms[i] == T{0}) continue;
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  return detail::make_result<T>({r, c}, std::move(out), {x}, [r, c, norms = std::move(norms)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < r; ++i) {
      if (norms[i] == T{0}) continue;
      const T* y = self.value.data() + i * c;
      const T* dy = self.grad.data() + i * c;
      T dot{0};
      for (std::size_t j = 0; j < c; ++j) dot += y[j] * dy[j];
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += (dy[j] - y[j] * dot) / norms[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Row gathering and layout

// out[i] = x[index[i]]; indices may repeat (gradients accumulate).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::vector<std::size_t> index) {
  detail::require_matrix(x, "gather_rows");
  const std::size_t r = x.shape()[0], c = x.shape()[1];
  Buffer<T> out(index.size() * c);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= r)
      throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " + shape_str(x.shape()));
    std::copy_n(x.data() + index[i] * c, c, out.data() + i * c);
  }
  const std::size_t n = index.size();
  return detail::make_result<T>({n, c}, std::move(out), {x}, [c, index = std::move(index)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < index.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[index[i] * c + j] += self.grad[i * c + j];
  });
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::vector<std::size_t> ids) {
  return gather_rows(table, std::move(ids));
}

template <typename T>
Tensor<T> concatenate(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concatenate: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concatenate");
    if (p.cols() != c)
      throw DimensionError("concatenate: column mismatch " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
    total += p.rows();
  }
  Buffer<T> out;
  out.reserve(total * c);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  return detail::make_result<T>({total, c}, std::move(out), parts, [](Node<T>& self) {
    std::size_t offset = 0;
    for (auto& p : self.parents) {
      const std::size_t n = p->value.size();
      if (p->requires_grad) {
        T* g = p->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offset + i];
      }
      offset += n;
    }
  });
}

// Rows [begin, end).
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice");
  const std::size_t c = x.shape()[1];
  if (begin > end || end > x.shape()[0])
    throw DimensionError("slice: rows [" + std::to_string(begin) + "," + std::to_string(end) + ") out of " + shape_str(x.shape()));
  Buffer<T> out(x.values().begin() + begin * c, x.values().begin() + end * c);
  return detail::make_result<T>({end - begin, c}, std::move(out), {x}, [begin, c](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer() + begin * c;
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  Buffer<T> out(x.values().begin(), x.values().end());
  return detail::make_result<T>(std::move(shape), std::move(out), {x}, [](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Attention

namespace detail {

// Softmax over the allowed entries of one row; masked entries get exactly 0.
template <typename T>
void masked_softmax_row(const T* scores, const unsigned char* allow, std::size_t n, T* out) {
  T mx = -std::numeric_limits<T>::infinity();
  bool any = false;
  for (std::size_t j = 0; j < n; ++j)
    if (allow[j]) {
      mx = std::max(mx, scores[j]);
      any = true;
    }
  if (!any) throw DimensionError("masked_softmax: fully masked row");
  T z{0};
  for (std::size_t j = 0; j < n; ++j) {
    if (allow[j]) {
      out[j] = std::exp(scores[j] - mx);
      z += out[j];
    } else {
      out[j] = T{0};
    }
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

// dS = P * (dP - <dP, P>) for one row.
template <typename T>
void softmax_row_backward(const T* p, const T* dp, std::size_t n, T* ds_accum) {
  T dot{0};
  for (std::size_t j = 0; j < n; ++j) dot += p[j] * dp[j];
  for (std::size_t j = 0; j < n; ++j) ds_accum[j] += p[j] * (dp[j] - dot);
}

}  // namespace detail

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const BoolMatrix& mask) {
  detail::require_matrix(scores, "masked_softmax");
  const std::size_t q = scores.shape()[0], k = scores.shape()[1];
  if (mask.rows() != q || mask.cols() != k)
    throw DimensionError("masked_softmax: mask [" + std::to_string(mask.rows()) + "x" + std::to_string(mask.cols()) +
                         "] vs scores " + shape_str(scores.shape()));
  Buffer<T> out(q * k);
  for (std::size_t i = 0; i < q; ++i)
    detail::masked_softmax_row(scores.data() + i * k, mask.bits().data() + i * k, k, out.data() + i * k);
  return detail::make_result<T>({q, k}, std::move(out), {scores}, [q, k](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < q; ++i)
      detail::softmax_row_backward(self.value.data() + i * k, self.grad.data() + i * k, k, g + i * k);
  });
}

// Multi-head scaled dot-product attention over `blocks` independent sequences
// stacked row-wise: q is [blocks*nq x d], k and v are [blocks*nk x d]. The
// same mask [nq x nk] applies within every block; an empty mask allows all.
template <typename T>
Tensor<T> block_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const BoolMatrix& mask,
                          std::size_t blocks, std::size_t n_heads) {
  detail::require_matrix(q, "block_attention");
  detail::require_matrix(k, "block_attention");
  detail::require_matrix(v, "block_attention");
  const std::size_t d = q.shape()[1];
  if (k.shape()[1] != d || v.shape()[1] != d || k.shape()[0] != v.shape()[0])
    throw DimensionError("block_attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                         shape_str(v.shape()));
  if (blocks == 0 || q.shape()[0] % blocks != 0 || k.shape()[0] % blocks != 0)
    throw DimensionError("block_attention: rows not divisible into " + std::to_string(blocks) + " blocks");
  if (n_heads == 0 || d % n_heads != 0)
    throw DimensionError("block_attention: width " + std::to_string(d) + " not divisible by heads " + std::to_string(n_heads));
  const std::size_t nq = q.shape()[0] / blocks, nk = k.shape()[0] / blocks, hd = d / n_heads;
  BoolMatrix allow = mask.rows() == 0 ? BoolMatrix(nq, nk, true) : mask;
  if (allow.rows() != nq || allow.cols() != nk)
    throw DimensionError("block_attention: mask [" + std::to_string(allow.rows()) + "x" + std::to_string(allow.cols()) +
                         "] vs block [" + std::to_string(nq) + "x" + std::to_string(nk) + "]");
  const T scale_factor = T{1} / std::sqrt(static_cast<T>(hd));

  // probs layout: [block][head][nq x nk]
  Buffer<T> probs(blocks * n_heads * nq * nk);
  Buffer<T> out(blocks * nq * d, T{0});
  using Strided = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;
  using MStrided = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  const auto ld = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
  const auto enq = static_cast<Eigen::Index>(nq), enk = static_cast<Eigen::Index>(nk), ehd = static_cast<Eigen::Index>(hd);
  RowMat<T> scores(enq, enk);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      Strided qh(q.data() + b * nq * d + h * hd, enq, ehd, ld);
      Strided kh(k.data() + b * nk * d + h * hd, enk, ehd, ld);
      Strided vh(v.data() + b * nk * d + h * hd, enk, ehd, ld);
      scores.noalias() = (qh * kh.transpose()) * scale_factor;
      T* p = probs.data() + (b * n_heads + h) * nq * nk;
      for (std::size_t i = 0; i < nq; ++i)
        detail::masked_softmax_row(scores.data() + i * nk, allow.bits().data() + i * nk, nk, p + i * nk);
      MStrided oh(out.data() + b * nq * d + h * hd, enq, ehd, ld);
      oh.noalias() = ConstMatMap<T>(p, enq, enk) * vh;
    }
  }
  return detail::make_result<T>(
      {blocks * nq, d}, std::move(out), {q, k, v},
      [=, probs = std::move(probs)](Node<T>& self) {
        Node<T>& pq = *self.parents[0];
        Node<T>& pk = *self.parents[1];
        Node<T>& pv = *self.parents[2];
        T* gq = pq.requires_grad ? pq.grad_buffer() : nullptr;
        T* gk = pk.requires_grad ? pk.grad_buffer() : nullptr;
        T* gv = pv.requires_grad ? pv.grad_buffer() : nullptr;
        RowMat<T> dp(enq, enk), ds(enq, enk);
        for (std::size_t b = 0; b < blocks; ++b) {
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* p = probs.data() + (b * n_heads + h) * nq * nk;
            ConstMatMap<T> P(p, enq, enk);
            Strided dO(self.grad.data() + b * nq * d + h * hd, enq, ehd, ld);
            Strided qh(pq.value.data() + b * nq * d + h * hd, enq, ehd, ld);
            Strided kh(pk.value.data() + b * nk * d + h * hd, enk, ehd, ld);
            Strided vh(pv.value.data() + b * nk * d + h * hd, enk, ehd, ld);
            if (gv) MStrided(gv + b * nk * d + h * hd, enk, ehd, ld).noalias() += P.transpose() * dO;
            if (!gq && !gk) continue;
            dp.noalias() = dO * vh.transpose();
            ds.setZero();
            for (std::size_t i = 0; i < nq; ++i)
              detail::softmax_row_backward(p + i * nk, dp.data() + i * nk, nk, ds.data() + i * nk);
            ds *= scale_factor;
            if (gq) MStrided(gq + b * nq * d + h * hd, enq, ehd, ld).noalias() += ds * kh;
            if (gk) MStrided(gk + b * nk * d + h * hd, enk, ehd, ld).noalias() += ds.transpose() * qh;
          }
        }
      });
}

// Rotary position encoding: within each head, feature pairs (2i, 2i+1) are
// rotated by angle position * base^(-2i/head_dim).
template <typename T>
Tensor<T> rope(const Tensor<T>& x, const std::vector<std::size_t>& positions, std::size_t n_heads, T base = T{10000}) {
  detail::require_matrix(x, "rope");
  const std::size_t r = x.shape()[0], d = x.shape()[1];
  if (positions.size() != r)
    throw DimensionError("rope: " + std::to_string(positions.size()) + " positions for " + shape_str(x.shape()));
  if (n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0)
    throw DimensionError("rope: head width must be even, width " + std::to_string(d) + " heads " + std::to_string(n_heads));
  const std::size_t hd = d / n_heads, half = hd / 2;
  Buffer<T> cs(r * half), sn(r * half);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < half; ++j) {
      const T angle = static_cast<T>(positions[i]) * std::pow(base, -T(2 * j) / static_cast<T>(hd));
      cs[i * half + j] = std::cos(angle);
      sn[i * half + j] = std::sin(angle);
    }
  Buffer<T> out(r * d);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t h = 0; h < n_heads; ++h)
      for (std::size_t j = 0; j < half; ++j) {
        const std::size_t o = i * d + h * hd + 2 * j;
        const T c = cs[i * half + j], s = sn[i * half + j];
        out[o] = x[o] * c - x[o + 1] * s;
        out[o + 1] = x[o] * s + x[o + 1] * c;
      }
  return detail::make_result<T>({r, d}, std::move(out), {x},
                                [=, cs = std::move(cs), sn = std::move(sn)](Node<T>& self) {
                                  Node<T>& p = *self.parents[0];
                                  if (!p.requires_grad) return;
                                  T* g = p.grad_buffer();
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t h = 0; h < n_heads; ++h)
                                      for (std::size_t j = 0; j < half; ++j) {
                                        const std::size_t o = i * d + h * hd + 2 * j;
                                        const T c = cs[i * half + j], s = sn[i * half + j];
                                        g[o] += self.grad[o] * c + self.grad[o + 1] * s;
                                        g[o + 1] += -self.grad[o] * s + self.grad[o + 1] * c;
                                      }
                                });
}

// ---------------------------------------------------------------------------
// Images

// frames [n x C x H x W] (any shape with n*C*H*W elements) to patch rows
// [n*(H/p)*(W/p) x C*p*p], ordered frame, patch row, patch column; features
// ordered channel, dy, dx.
template <typename T>
Tensor<T> patchify(const Tensor<T>& frames, std::size_t n, std::size_t channels, std::size_t height,
                   std::size_t width, std::size_t patch) {
  if (frames.size() != n * channels * height * width)
    throw DimensionError("patchify: " + shape_str(frames.shape()) + " is not " + std::to_string(n) + " frames of " +
                         std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width));
  if (patch == 0 || height % patch != 0 || width % patch != 0)
    throw DimensionError("patchify: frame " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by patch " + std::to_string(patch));
  const std::size_t ph = height / patch, pw = width / patch, feat = channels * patch * patch;
  std::vector<std::size_t> src(n * ph * pw * feat);
  std::size_t o = 0;
  for (std::size_t f = 0; f < n; ++f)
    for (std::size_t py = 0; py < ph; ++py)
      for (std::size_t px = 0; px < pw; ++px)
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t dy = 0; dy < patch; ++dy)
            for (std::size_t dx = 0; dx < patch; ++dx)
              src[o++] = ((f * channels + c) * height + py * patch + dy) * width + px * patch + dx;
  Buffer<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = frames[src[i]];
  return detail::make_result<T>({n * ph * pw, feat}, std::move(out), {frames}, [src = std::move(src)](Node<T>& self) {
    Node<T>& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) g[src[i]] += self.grad[i];
  });
}

}  // namespace lwam
