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
#include <functional>
#include <vector>

#include "lwam/numerics/tensor.hpp"

namespace lwam {

struct GradCheckResult {
  double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||, floor)
  double max_abs_error = 0.0;
  std::size_t n_checked = 0;
};

// Compares tape gradients of `loss_fn` with respect to `inputs` against
// central finite differences of the forward value alone. `inputs` must be
// leaf tensors with requires_grad set; `loss_fn` rebuilds the graph from them.
// With max_per_input > 0 only an evenly spaced subset of entries is probed.
inline GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                               std::vector<Tensor<double>> inputs, double step = 1e-5,
                                               std::size_t max_per_input = 0, double floor = 1e-10) {
  for (auto& x : inputs) x.zero_grad();
  {
    Tape<double> tape;
    Tensor<double> loss;
    {
      auto scope = tape.activate();
      loss = loss_fn();
    }
    tape.backward(loss);
  }
  std::vector<double> analytic, numeric;
  for (auto& x : inputs) {
    const std::size_t n = x.size();
    const std::size_t stride = (max_per_input == 0 || n <= max_per_input) ? 1 : (n + max_per_input - 1) / max_per_input;
    for (std::size_t i = 0; i < n; i += stride) {
      analytic.push_back(x.has_grad() ? x.grad()[i] : 0.0);
      auto vals = x.mutable_values();
      const double saved = vals[i];
      vals[i] = saved + step;
      const double up = loss_fn().item();
      vals[i] = saved - step;
      const double down = loss_fn().item();
      vals[i] = saved;
      numeric.push_back((up - down) / (2.0 * step));
    }
  }
  GradCheckResult r;
  r.n_checked = analytic.size();
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = analytic[i] - numeric[i];
    diff += e * e;
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
    r.max_abs_error = std::max(r.max_abs_error, std::abs(e));
  }
  r.rel_error = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
  for (auto& x : inputs) x.zero_grad();
  return r;
}

}  // namespace lwam
