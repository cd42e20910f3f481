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
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "lwam/numerics/tensor.hpp"

namespace lwam {

// Named, ordered parameter collection. Frozen entries never require grad and
// are excluded from optimization.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> tensor;
    bool frozen = false;
  };

  Tensor<T>& add(const std::string& name, Shape shape, std::vector<T> values, bool frozen = false) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    Tensor<T> t = frozen ? Tensor<T>::constant(std::move(shape), std::move(values))
                         : Tensor<T>::parameter(std::move(shape), std::move(values));
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(t), frozen});
    return entries_.back().tensor;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return entries_[it->second].tensor;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  // Copy converted to another scalar type (f64 training -> f32 inference).
  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) {
      std::vector<U> v(e.tensor.values().begin(), e.tensor.values().end());
      out.add(e.name, e.tensor.shape(), std::move(v), e.frozen);
    }
    return out;
  }

  // Deep copy with fresh leaves.
  ParamStore clone() const { return cast<T>(); }

  // FNV-1a over the raw bytes of the selected entries.
  std::uint64_t checksum(bool frozen_only) const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& e : entries_) {
      if (frozen_only && !e.frozen) continue;
      for (char ch : e.name) h = (h ^ static_cast<unsigned char>(ch)) * 1099511628211ull;
      const auto* bytes = reinterpret_cast<const unsigned char*>(e.tensor.data());
      for (std::size_t i = 0; i < e.tensor.size() * sizeof(T); ++i) h = (h ^ bytes[i]) * 1099511628211ull;
    }
    return h;
  }

  std::size_t count(bool include_frozen = true) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (include_frozen || !e.frozen) n += e.tensor.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Seeded initializers.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  std::vector<double> normal(std::size_t n, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng_);
    return v;
  }
  // N(0, 1/fan_in) weights for a [fan_in x fan_out] matrix.
  std::vector<double> fan_in(std::size_t in, std::size_t out) { return normal(in * out, 1.0 / std::sqrt(double(in))); }
  static std::vector<double> constant(std::size_t n, double v) { return std::vector<double>(n, v); }

 private:
  std::mt19937_64 rng_;
};

}  // namespace lwam
