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


// Property suites shared by the command line and the acceptance runner.
// Each suite returns one row per property with the worst observed value.

#pragma once

#include <cmath>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lwam/model.hpp"
#include "lwam/numerics.hpp"
#include "lwam/objectives.hpp"
#include "lwam/packing.hpp"
#include "lwam/trainer.hpp"

namespace lwam {

struct PropertyRow {
  std::string name;
  std::size_t cases = 0;
  double worst = 0.0;  // largest error, or failure count for exact checks
  double tol = 0.0;
  bool pass = true;
};

inline nlohmann::json to_json(const PropertyRow& r) {
  return {{"name", r.name}, {"cases", r.cases}, {"worst", r.worst}, {"tol", r.tol}, {"pass", r.pass}};
}

inline void print_table(std::ostream& os, const std::vector<PropertyRow>& rows) {
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%-34s %6zu  worst %-12.4g tol %-10.3g %s\n", r.name.c_str(), r.cases, r.worst, r.tol,
                  r.pass ? "PASS" : "FAIL");
    os << line;
  }
}

inline bool all_pass(const std::vector<PropertyRow>& rows) {
  for (const auto& r : rows)
    if (!r.pass) return false;
  return true;
}

inline double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Tiny configuration for property checks.
inline RunConfig micro_config() {
  RunConfig c;
  c.world.H = 2;
  c.world.T = 3;
  c.world.n_future = 2;
  c.world.context_res = 4;
  c.world.future_res = 4;
  c.world.n_instr = 2;
  c.model.K = 2;
  c.model.d = 8;
  c.model.n_layers = 2;
  c.model.n_heads = 2;
  c.model.align_last_L = 2;
  c.model.patch = 2;
  c.model.future_patch = 2;
  c.model.resampler_layers = 1;
  c.model.time_features = 4;
  c.model.ffn_mult_understanding = 2;
  c.model.ffn_mult_action = 1;
  c.sampler.execute_steps = 2;
  validate(c);
  return c;
}

// Random model inputs for `batch` examples; frames uniform in [0, 1].
inline ModelInputs<double> random_model_inputs(const RunConfig& c, std::size_t batch, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> tok(0, c.model.vocab - 1);
  const auto fill = [&](std::size_t n, bool gaussian) {
    std::vector<double> v(n);
    for (auto& x : v) x = gaussian ? g(rng) : u01(rng);
    return v;
  };
  const auto& w = c.world;
  const std::size_t cf = kChannels * w.context_res * w.context_res, ff = kChannels * w.future_res * w.future_res;
  ModelInputs<double> in;
  in.batch = batch;
  for (std::size_t i = 0; i < batch * w.n_instr; ++i) in.instruction.push_back(tok(rng));
  in.context_frames = Tensor<double>::constant({batch * w.H, cf}, fill(batch * w.H * cf, false));
  in.state = Tensor<double>::constant({batch, kStateDim}, fill(batch * kStateDim, false));
  in.future_frames = Tensor<double>::constant({batch * w.n_future, ff}, fill(batch * w.n_future * ff, false));
  in.noised_actions = Tensor<double>::constant({batch * w.T, kActionDim}, fill(batch * w.T * kActionDim, true));
  in.flow_time = fill(batch, false);
  return in;
}

// Every training loss term through a micro model against central finite
// differences, one fresh model per seed.
inline std::vector<PropertyRow> gradcheck_suite(std::size_t n_seeds, double tol = 1e-5) {
  const RunConfig c = micro_config();
  using Member = Tensor<double> LossTerms::*;
  const std::vector<std::pair<const char*, Member>> terms = {
      {"fm_loss (prior)", &LossTerms::fm_prior}, {"fm_loss (posterior)", &LossTerms::fm_post},
      {"align_loss", &LossTerms::align},         {"norm_reg", &LossTerms::norm},
      {"rank_reg", &LossTerms::rank},            {"total", &LossTerms::total}};
  std::vector<PropertyRow> rows;
  for (const auto& [name, _] : terms) rows.push_back({name, 0, 0.0, tol, true});
  PropertyRow raw_rank{"rank_reg (raw, tall and narrow)", 0, 0.0, tol, true};
  for (std::size_t s = 0; s < n_seeds; ++s) {
    auto model = WorldActionModel<double>::initialize(c, 700 + s);
    std::mt19937_64 rng(900 + s);
    Batch batch;
    batch.inputs = random_model_inputs(c, 2, rng);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> target(2 * c.world.T * kActionDim);
    for (auto& x : target) x = g(rng);
    batch.target = Tensor<double>::constant({2 * c.world.T, kActionDim}, target);
    const auto proj = random_projection(rng, c.model.d, c.n_proj());
    std::vector<Tensor<double>> probe;
    for (const char* p : {"embed.latent", "enc.res.queries", "u.l0.wq", "u.l1.ffn_in", "a.l0.wv", "a.l1.ffn_out",
                          "embed.action_w", "head.w"})
      probe.push_back(model.params().get(p));
    for (std::size_t k = 0; k < terms.size(); ++k) {
      const Member m = terms[k].second;
      const auto r = finite_difference_check(
          [&] { return compute_losses(model, batch, proj, Ablation::Dual, TrainMode::Pretrain).*m; }, probe, 1e-5, 6);
      rows[k].cases++;
      rows[k].worst = std::max(rows[k].worst, r.rel_error);
    }
    // Directly on the regularizer, with more rows than projected dims and
    // the reverse, so both Gram forms are exercised.
    for (auto [M, n] : {std::pair<std::size_t, std::size_t>{9, 3}, {3, 6}}) {
      std::vector<double> hv(M * 6), pv(6 * n);
      for (auto& x : hv) x = g(rng);
      for (auto& x : pv) x = g(rng) / std::sqrt(6.0);
      auto h = Tensor<double>::parameter({M, 6}, hv);
      const auto p = Tensor<double>::constant({6, n}, pv);
      raw_rank.cases++;
      raw_rank.worst = std::max(raw_rank.worst, finite_difference_check([&] { return rank_reg(h, p); }, {h}).rel_error);
    }
  }
  rows.push_back(raw_rank);
  for (auto& r : rows) r.pass = r.worst <= r.tol;
  return rows;
}

// Exhaustive mask scan over random layouts. Worst is the failure count.
inline std::vector<PropertyRow> maskcheck_suite(std::size_t n_layouts, std::uint64_t seed = 2024) {
  PropertyRow iso{"branch isolation", 0, 0, 0, true}, purity{"context purity", 0, 0, 0, true},
      mirror{"position mirroring", 0, 0, 0, true}, strip{"strip equivalence", 0, 0, 0, true};
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> small(1, 6), state(0, 2);
  for (std::size_t trial = 0; trial < n_layouts; ++trial) {
    const std::size_t ni = small(rng), nc = small(rng), ns = state(rng), K = small(rng), T = small(rng);
    const auto l = build_layout(ni, nc, ns, K, T);
    const auto m = build_mask(l);
    const std::size_t n = l.total_len(), c = ni + nc + ns;
    bool iso_ok = n == c + 2 * (K + T), pure_ok = true, mirror_ok = true, strip_ok = true;
    for (std::size_t q = 0; q < n; ++q) {
      bool any = false;
      for (std::size_t k = 0; k < n; ++k) {
        const Branch bq = l.branch[q], bk = l.branch[k];
        if (bq != Branch::Shared && bk != Branch::Shared && bq != bk && m(q, k)) iso_ok = false;
        if (bq == Branch::Shared && m(q, k) != (bk == Branch::Shared)) pure_ok = false;
        any = any || m(q, k);
      }
      if (!any) iso_ok = false;
    }
    for (std::size_t i = 0; i < c; ++i) mirror_ok = mirror_ok && l.position_ids[i] == i;
    const auto pri = branch_slots(l, Branch::Prior), post = branch_slots(l, Branch::Posterior);
    mirror_ok = mirror_ok && pri.size() == K + T && post.size() == K + T;
    for (std::size_t j = 0; mirror_ok && j < K + T; ++j)
      mirror_ok = l.position_ids[pri[j]] == l.position_ids[post[j]] && l.position_ids[pri[j]] == c + j;
    for (Branch drop : {Branch::Prior, Branch::Posterior}) {
      const Branch keep = drop == Branch::Prior ? Branch::Posterior : Branch::Prior;
      auto [sl, sm] = strip_branch(l, m, drop);
      const auto direct = build_single_branch_layout(ni, nc, ns, K, T, keep);
      strip_ok = strip_ok && sl == direct && sm == build_mask(direct);
    }
    for (auto [row, ok] : {std::pair<PropertyRow*, bool>{&iso, iso_ok}, {&purity, pure_ok}, {&mirror, mirror_ok},
                           {&strip, strip_ok}}) {
      row->cases++;
      if (!ok) row->worst += 1;
    }
  }
  std::vector<PropertyRow> rows{iso, purity, mirror, strip};
  for (auto& r : rows) r.pass = r.worst == 0;
  return rows;
}

// Packed dual-branch forward against single-branch forwards, and prior
// outputs against changes to posterior-only inputs.
inline std::vector<PropertyRow> packing_equivalence_suite(std::size_t n_models) {
  const RunConfig c = micro_config();
  PropertyRow pri{"packed vs single pass (prior)", 0, 0.0, 1e-10, true},
      post{"packed vs single pass (posterior)", 0, 0.0, 1e-10, true},
      inv{"posterior-input invariance", 0, 0.0, 1e-12, true};
  for (std::size_t s = 0; s < n_models; ++s) {
    std::mt19937_64 rng(50 + s);
    const auto model = WorldActionModel<double>::initialize(c, s);
    auto in = random_model_inputs(c, 3, rng);
    const auto dual = model.forward(in, LayoutKind::Dual);
    const auto p = model.forward(in, LayoutKind::PriorOnly);
    const auto q = model.forward(in, LayoutKind::PosteriorOnly);
    pri.worst = std::max(pri.worst, max_abs_diff(dual.backbone.velocity_prior, p.backbone.velocity_prior));
    post.worst = std::max(post.worst, max_abs_diff(dual.backbone.velocity_post, q.backbone.velocity_post));
    in.future_frames = random_model_inputs(c, 3, rng).future_frames;
    const auto moved = model.forward(in, LayoutKind::Dual);
    inv.worst = std::max(inv.worst, max_abs_diff(dual.backbone.velocity_prior, moved.backbone.velocity_prior));
    for (std::size_t l = 0; l < dual.backbone.taps.prior.size(); ++l)
      inv.worst = std::max(inv.worst, max_abs_diff(dual.backbone.taps.prior[l], moved.backbone.taps.prior[l]));
    pri.cases++, post.cases++, inv.cases++;
  }
  std::vector<PropertyRow> rows{pri, post, inv};
  for (auto& r : rows) r.pass = r.worst <= r.tol;
  return rows;
}

// Closed-form values of the objectives.
inline std::vector<PropertyRow> analytic_loss_suite(std::uint64_t seed = 7) {
  using Td = Tensor<double>;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const auto eye = [](std::size_t n) {
    auto t = Td::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t.mutable_values()[i * n + i] = 1.0;
    return t;
  };
  const auto randn = [&](std::size_t r, std::size_t k, double sd = 1.0) {
    std::vector<double> v(r * k);
    for (auto& x : v) x = sd * g(rng);
    return Td::constant({r, k}, v);
  };
  std::vector<PropertyRow> rows;

  // Identical rows: a rank-one Gram has zero entropy.
  PropertyRow same{"rank_reg identical rows", 0, 0.0, 1e-12, true};
  for (std::size_t M = 1; M <= 8; ++M) {
    const auto row = randn(1, 6);
    std::vector<double> v;
    for (std::size_t i = 0; i < M; ++i) v.insert(v.end(), row.values().begin(), row.values().end());
    same.worst = std::max(same.worst, std::abs(rank_reg(Td::constant({M, 6}, v), eye(6)).item()));
    same.cases++;
  }
  rows.push_back(same);

  // Orthonormal rows from a random rotation: uniform spectrum.
  PropertyRow orth{"rank_reg orthogonal rows = -ln M", 0, 0.0, 1e-9, true};
  for (std::size_t M = 1; M <= 6; ++M) {
    const std::size_t d = 6;
    std::vector<std::vector<double>> basis;
    while (basis.size() < M) {
      std::vector<double> v(d);
      for (auto& x : v) x = g(rng);
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * b[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
      }
      double nrm = 0.0;
      for (double x : v) nrm += x * x;
      nrm = std::sqrt(nrm);
      if (nrm < 1e-6) continue;
      for (auto& x : v) x /= nrm;
      basis.push_back(v);
    }
    std::vector<double> flat;
    for (const auto& b : basis) flat.insert(flat.end(), b.begin(), b.end());
    const double r = rank_reg(Td::constant({M, d}, flat), eye(d)).item();
    orth.worst = std::max(orth.worst, std::abs(r + std::log(static_cast<double>(M))));
    orth.cases++;
  }
  rows.push_back(orth);

  // Random inputs stay within [-ln M, 0]; worst is the largest excursion.
  PropertyRow bound{"rank_reg in [-ln M, 0]", 0, 0.0, 1e-12, true};
  std::uniform_int_distribution<std::size_t> dm(1, 12), dn(1, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t M = dm(rng), n = dn(rng);
    const double r = rank_reg(randn(M, 6), randn(6, n)).item();
    bound.worst = std::max({bound.worst, r, -std::log(static_cast<double>(M)) - r});
    bound.cases++;
  }
  bound.worst = std::max(bound.worst, 0.0);
  rows.push_back(bound);

  // Hinge: above threshold, zero vector, half the threshold.
  PropertyRow hinge{"norm_reg hinge cases exact", 3, 0.0, 0.0, true};
  const double tau = 2.0;
  hinge.worst = std::max({std::abs(norm_reg<double>({Td::constant({2, 2}, {3, 0, 0, -2})}, tau).item()),
                          std::abs(norm_reg<double>({Td::zeros({1, 3})}, tau).item() - tau * tau),
                          std::abs(norm_reg<double>({Td::constant({1, 2}, {0.6, 0.8})}, tau).item() - 1.0)});
  rows.push_back(hinge);

  // Two tapped layers with one latent row each: ((0)^2 + 2^2)/2 + ((-2)^2 + 0)/2 = 4, mean over layers 2.
  AlignmentTaps<double> taps;
  taps.prior = {Td::constant({1, 2}, {1, 2}), Td::constant({1, 2}, {0, 0})};
  taps.post = {Td::constant({1, 2}, {1, 0}), Td::constant({1, 2}, {2, 0})};
  rows.push_back({"align_loss hand example = 2", 1, std::abs(align_loss(taps).item() - 2.0), 1e-12, true});

  for (auto& r : rows) r.pass = r.worst <= r.tol;
  return rows;
}

}  // namespace lwam
