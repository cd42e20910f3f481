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

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lwam {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

template <typename T>
class Tape;

// One vertex of the computation graph. Leaves (parameters, constants) have no
// backward function; interior nodes are owned by the tape that recorded them.
// Cache-line aligned storage. Vectorized reductions peel a prefix whose length
// depends on the start address, so fixing the alignment keeps results
// bitwise reproducible across allocations.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::size_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T{0});
    return grad.data();
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::initializer_list<T> values) {
    return constant(std::move(shape), Buffer<T>(values));
  }
  static Tensor constant(Shape shape, const std::vector<T>& values) {
    return constant(std::move(shape), Buffer<T>(values.begin(), values.end()));
  }
  static Tensor constant(Shape shape, Buffer<T> values) {
    if (numel(shape) != values.size())
      throw DimensionError("value count " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    const auto count = numel(shape);
    return constant(std::move(shape), Buffer<T>(count, T{0}));
  }
  static Tensor filled(Shape shape, T v) {
    const auto count = numel(shape);
    return constant(std::move(shape), Buffer<T>(count, v));
  }
  static Tensor scalar(T v) { return constant({}, Buffer<T>{v}); }
  static Tensor parameter(Shape shape, std::initializer_list<T> values) {
    return parameter(std::move(shape), Buffer<T>(values));
  }
  static Tensor parameter(Shape shape, const std::vector<T>& values) {
    return parameter(std::move(shape), Buffer<T>(values.begin(), values.end()));
  }
  static Tensor parameter(Shape shape, Buffer<T> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rows() const { return rank() == 0 ? 1 : node_->shape[0]; }
  std::size_t cols() const { return rank() == 0 ? 1 : size() / node_->shape[0]; }
  std::size_t node_id() const { return node_->id; }

  std::span<const T> values() const { return node_->value; }
  std::span<T> mutable_values() { return node_->value; }
  const T* data() const { return node_->value.data(); }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  T item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }
  void zero_grad() { node_->grad.clear(); }

  // Fresh leaf with the same values, cut from any graph.
  Tensor detach() const { return constant(shape(), node_->value); }

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Records primitive operations in execution order. A tape is single-use: one
// backward pass consumes it. Ops record onto the tape activated on the current
// thread; with no active tape nothing is recorded (inference mode).
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape() {
    if (active_ == this) active_ = nullptr;
  }

  class Scope {
   public:
    explicit Scope(Tape* tape) : previous_(active_) { active_ = tape; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
    ~Scope() { active_ = previous_; }

   private:
    Tape* previous_;
  };

  [[nodiscard]] Scope activate() {
    if (consumed_) throw TapeError("tape already consumed by a backward pass");
    return Scope(this);
  }
  static Tape* active() { return active_; }

  void record(const std::shared_ptr<Node<T>>& node) {
    if (consumed_) throw TapeError("recording onto a consumed tape");
    node->id = nodes_.size() + 1;
    nodes_.push_back(node);
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(const Tensor<T>& root) {
    if (consumed_) throw TapeError("second backward pass on the same tape");
    if (root.size() != 1 || root.rank() != 0)
      throw DimensionError("backward root must be a scalar, got " + shape_str(root.shape()));
    consumed_ = true;
    if (!root.requires_grad()) {
      nodes_.clear();
      return;
    }
    root.node().grad_buffer()[0] += T{1};
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (!n.grad.empty() && n.backward_fn) n.backward_fn(n);
    }
    for (auto& n : nodes_) {
      n->backward_fn = nullptr;
      n->parents.clear();
    }
    nodes_.clear();
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
  bool consumed_ = false;
  static inline thread_local Tape* active_ = nullptr;
};

namespace detail {

// Builds an op result. The backward closure is attached only when some parent
// needs a gradient and a tape is recording.
template <typename T>
Tensor<T> make_result(Shape shape, Buffer<T> value, std::vector<Tensor<T>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  Tape<T>* tape = Tape<T>::active();
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (tape != nullptr && needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
    tape->record(n);
  }
  return Tensor<T>(std::move(n));
}

template <typename T>
inline bool wants_grad(const Node<T>& self, std::size_t parent) {
  return self.parents[parent]->requires_grad;
}

}  // namespace detail

// Dense row-major boolean matrix; allow(q, k) for attention masks.
class BoolMatrix {
 public:
  BoolMatrix() = default;
  BoolMatrix(std::size_t rows, std::size_t cols, bool fill = false)
      : rows_(rows), cols_(cols), bits_(rows * cols, fill ? 1 : 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const { return bits_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_[r * cols_ + c] = v ? 1 : 0; }
  const std::vector<unsigned char>& bits() const { return bits_; }
  bool operator==(const BoolMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<unsigned char> bits_;
};

}  // namespace lwam
