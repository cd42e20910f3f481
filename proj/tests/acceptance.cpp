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


// Acceptance runner: one PASS/FAIL line per criterion. Trained desk models
// are cached under --workdir so reruns only repeat the cheap checks.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "lwam/checkpoint.hpp"
#include "lwam/dataset.hpp"
#include "lwam/evaluate.hpp"
#include "lwam/inference.hpp"
#include "lwam/properties.hpp"
#include "lwam/trainer.hpp"
#include "lwam/uac.hpp"

#ifndef LWAM_CONFIG_DIR
#define LWAM_CONFIG_DIR "configs"
#endif

namespace fs = std::filesystem;
using namespace lwam;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << x;
  return os.str();
}

std::string failing_rows(const std::vector<PropertyRow>& rows) {
  std::string s;
  for (const auto& r : rows)
    if (!r.pass) s += " [" + r.name + " worst " + fmt(r.worst) + "]";
  return s;
}

double worst_of(const std::vector<PropertyRow>& rows) {
  double w = 0.0;
  for (const auto& r : rows) w = std::max(w, r.worst);
  return w;
}

// ------------------------------------------------------------ criteria 1-4

Outcome gradient_soundness() {
  const auto t0 = Clock::now();
  const auto rows = gradcheck_suite(50, 1e-5);
  const double secs = seconds_since(t0);
  const bool ok = all_pass(rows) && secs < 300.0;
  return {ok, "50 micro models, worst relative error " + fmt(worst_of(rows)) + " (tol 1e-5), " + fmt(secs, 3) +
                  " s (limit 300 s)" + failing_rows(rows)};
}

Outcome mask_and_packing() {
  const auto t0 = Clock::now();
  const auto rows = maskcheck_suite(100);
  const double secs = seconds_since(t0);
  return {all_pass(rows) && secs < 10.0,
          "100 random layouts, 4 invariants, " + fmt(secs, 3) + " s (limit 10 s)" + failing_rows(rows)};
}

Outcome packed_equivalence() {
  const auto rows = packing_equivalence_suite(20);
  return {all_pass(rows), "20 micro models: prior " + fmt(rows[0].worst) + ", posterior " + fmt(rows[1].worst) +
                              " (tol 1e-10); posterior-input invariance " + fmt(rows[2].worst) + " (tol 1e-12)" +
                              failing_rows(rows)};
}

Outcome analytic_losses() {
  const auto rows = analytic_loss_suite();
  std::string d;
  for (const auto& r : rows) d += (d.empty() ? "" : "; ") + r.name + " " + fmt(r.worst);
  return {all_pass(rows), d + failing_rows(rows)};
}

// ------------------------------------------------------------ criterion 5

Outcome flow_sampler_and_parity(const std::string& config_dir) {
  const RunConfig c = micro_config();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Observation> obs(3);
  for (auto& o : obs) {
    for (auto t : instruction_tokens(static_cast<std::uint32_t>(rng() % c.world.n_goals), c.world)) o.instruction.push_back(t);
    o.context_frames.resize(c.world.H * kChannels * c.world.context_res * c.world.context_res);
    for (auto& x : o.context_frames) x = u01(rng);
    o.state.resize(kStateDim);
    for (auto& x : o.state) x = u01(rng);
  }
  std::size_t checked = 0, mismatches = 0;
  for (double u : {0.5, -1.25, 3.0, 1.0 / 3.0}) {
    auto m = WorldActionModel<double>::initialize(c, 21);
    for (auto& e : m.params().entries()) {
      if (e.name == "head.w") std::fill(e.tensor.mutable_values().begin(), e.tensor.mutable_values().end(), 0.0);
      if (e.name == "head.b") e.tensor.mutable_values()[0] = u, e.tensor.mutable_values()[1] = -u / 7.0;
    }
    std::vector<double> eps(obs.size() * c.world.T * kActionDim);
    for (auto& x : eps) x = g(rng);
    for (std::uint32_t n = 1; n <= 20; ++n) {
      const auto a = integrate_flow(m, obs, eps, n);
      for (std::size_t i = 0; i < a.size(); ++i, ++checked)
        if (a[i] != eps[i] + (i % 2 == 0 ? u : -u / 7.0)) ++mismatches;
    }
  }

  const RunConfig p = load_config(config_dir + "/paper.json");
  std::vector<std::string> wrong;
  const auto expect = [&](bool ok, const char* what) {
    if (!ok) wrong.push_back(what);
  };
  expect(p.world.H == 4, "H");
  expect(p.world.T == 20, "T");
  expect(p.model.K == 16, "K");
  expect(p.model.align_last_L == 9, "L");
  expect(p.loss.w_align == 1e-3, "w_align");
  expect(p.loss.w_norm == 1e-4, "w_norm");
  expect(p.loss.w_rank == 1e-4, "w_rank");
  expect(p.world.context_res == 224 && p.world.future_res == 256, "resolutions");
  std::string d = "constant field: " + std::to_string(mismatches) + " inexact of " + std::to_string(checked) +
                  " entries over n_steps 1..20; paper.json parity: ";
  if (wrong.empty()) d += "all values match";
  for (const auto& w : wrong) d += w + " differs ";
  return {mismatches == 0 && wrong.empty(), d};
}

// ------------------------------------------------------------ criteria 6-7

struct TrainedRun {
  std::string dir;
  double val0 = 0.0, val_final = 0.0, seconds = 0.0;
  bool cached = false;
};

// Trains (or reloads) one desk run. A cached run is reused only if its
// stored configuration equals the requested one.
TrainedRun train_cached(const RunConfig& cfg, const Dataset& data, const fs::path& dir) {
  TrainedRun r;
  r.dir = dir.string();
  const fs::path ck_path = dir / "final.lwck", summary_path = dir / "summary.json";
  if (fs::exists(ck_path) && fs::exists(summary_path)) {
    try {
      const Checkpoint ck = load_checkpoint(ck_path.string());
      const json s = json::parse(std::ifstream(summary_path));
      if (ck.config == cfg && ck.step == cfg.train.steps) {
        r.val0 = s.at("val0"), r.val_final = s.at("val_final"), r.seconds = s.at("seconds");
        r.cached = true;
        return r;
      }
    } catch (const std::exception&) {
      // Stale or damaged cache; retrain.
    }
  }
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  Trainer tr(cfg, data);
  std::ofstream metrics(dir / "metrics.jsonl");
  std::optional<double> first, last;
  tr.run(cfg.train.steps, [&](const StepMetrics& m) {
    metrics << to_json(m).dump() << "\n";
    if (m.val_fm_prior) {
      if (!first) first = m.val_fm_prior;
      last = m.val_fm_prior;
    }
  });
  r.seconds = seconds_since(t0);
  r.val0 = first.value_or(0.0);
  r.val_final = last.value_or(0.0);
  save_checkpoint(ck_path.string(), tr.checkpoint());
  std::ofstream(summary_path) << json{{"val0", r.val0}, {"val_final", r.val_final}, {"seconds", r.seconds}}.dump(2);
  return r;
}

RunConfig desk_run(const RunConfig& desk, const std::string& ablation, std::uint64_t seed) {
  RunConfig c = desk;
  c.train.ablation = ablation;
  c.train.seed = seed;
  c.train.ckpt_every = 0;
  return c;
}

Outcome desk_training(const RunConfig& desk, const Dataset& data, const fs::path& work) {
  const TrainedRun r = train_cached(desk_run(desk, "dual", 0), data, work / "runs" / "dual_s0");
  const double drop = r.val0 > 0 ? 1.0 - r.val_final / r.val0 : 0.0;
  const bool ok = drop >= 0.80 && r.seconds <= 1800.0;
  return {ok, "validation FM " + fmt(r.val0) + " -> " + fmt(r.val_final) + ", drop " + fmt(100 * drop, 3) +
                  "% (need >= 80%), " + fmt(r.seconds, 4) + " s (limit 1800 s)" +
                  (r.cached ? " [cached run]" : "")};
}

struct MethodScore {
  double success = 0.0, error = 0.0;
  std::vector<double> per_seed_success, per_seed_error;
};

Outcome method_signal(const RunConfig& desk, const Dataset& data, const fs::path& work, json& detail) {
  const std::size_t episodes = 200;
  const std::uint64_t eval_seed = 1000;
  std::map<std::string, MethodScore> score;
  for (const std::string ablation : {"dual", "no_latent", "prior_only"}) {
    auto& s = score[ablation];
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const RunConfig c = desk_run(desk, ablation, seed);
      const auto run = train_cached(c, data, work / "runs" / (ablation + "_s" + std::to_string(seed)));
      const Policy policy(load_checkpoint(run.dir + "/final.lwck"), c.sampler.dtype);
      const auto e = evaluate(model_policy(policy, c.sampler.n_steps), c.world, episodes, eval_seed, c.sampler.execute_steps);
      s.per_seed_success.push_back(e.success_rate);
      s.per_seed_error.push_back(e.mean_intercept_error);
      s.success += e.success_rate / 3.0;
      s.error += e.mean_intercept_error / 3.0;
      std::cout << "    " << ablation << " seed " << seed << ": success " << fmt(100 * e.success_rate, 3) << "%, error "
                << fmt(e.mean_intercept_error) << (run.cached ? " [cached]" : "") << std::endl;
    }
    detail[ablation] = {{"success", s.per_seed_success}, {"error", s.per_seed_error}};
  }
  const auto expert = evaluate(expert_policy(desk.world), desk.world, episodes, eval_seed, desk.sampler.execute_steps);
  const auto& d = score["dual"];
  const auto& nl = score["no_latent"];
  const auto& po = score["prior_only"];
  const double gap_nl = 100 * (d.success - nl.success), gap_po = 100 * (d.success - po.success);
  const bool ok = d.error < nl.error && gap_nl >= 10.0 && gap_po >= 5.0 && expert.success_rate >= 0.99;
  return {ok, "success dual " + fmt(100 * d.success, 3) + "%, no_latent " + fmt(100 * nl.success, 3) + "%, prior_only " +
                  fmt(100 * po.success, 3) + "% (gaps " + fmt(gap_nl, 3) + " / " + fmt(gap_po, 3) +
                  " points, need 10 / 5); error dual " + fmt(d.error) + " vs no_latent " + fmt(nl.error) +
                  " (prior_only " + fmt(po.error) + "); expert " + fmt(100 * expert.success_rate, 4) + "%"};
}

// Sweep of flow steps on a seeded validation set against the expert.
std::string flow_step_sweep(const RunConfig& desk, const fs::path& work) {
  const fs::path ck = work / "runs" / "dual_s0" / "final.lwck";
  if (!fs::exists(ck)) return "no trained model";
  const Policy policy(load_checkpoint(ck.string()), "f64");
  const Dataset val = generate_dataset(desk.world, 777);
  std::vector<Observation> obs;
  std::vector<Action> expert_first;
  for (std::size_t i = 0; i < 100 && i < val.chunks.size(); ++i) {
    const auto& ch = val.chunks[i * (val.chunks.size() / 100)];
    Observation o;
    for (float t : ch.instruction) o.instruction.push_back(static_cast<std::size_t>(t));
    o.context_frames = ch.context_frames;
    o.state = ch.state;
    obs.push_back(std::move(o));
    expert_first.push_back({ch.actions[0], ch.actions[1]});
  }
  std::string s;
  for (std::uint32_t n : {1u, 2u, 4u, 6u, 8u, 10u}) {
    const auto chunks = policy.sample_actions(obs, 5, n);
    double err = 0.0;
    for (std::size_t i = 0; i < obs.size(); ++i)
      err += std::hypot(chunks[i][0][0] - expert_first[i][0], chunks[i][0][1] - expert_first[i][1]);
    s += (s.empty() ? "" : ", ") + std::string("n=") + std::to_string(n) + " " + fmt(err / double(obs.size()));
  }
  return s;
}

// ------------------------------------------------------------ criterion 8

Outcome uac_properties(const RunConfig& desk, json& detail) {
  const auto t0 = Clock::now();
  UacConfig u = desk.uac;
  u.safety = 3.0;
  const double P = u.control_period_ms, median = 1.6 * P;
  const std::uint32_t T = desk.world.T;
  const auto threshold = uac::trigger_threshold(median, P, u.safety);
  const uac::LatencyModel lat{median, 0.4, static_cast<double>(T - threshold) * P, 0.0};
  std::size_t underflow = 0, violations = 0, max_in_flight = 0;
  bool cadence = true, monotone = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = uac::simulate(u, T, lat, 10000, seed);
    underflow += r.underflow_count;
    violations += r.prefix_violation_count;
    max_in_flight = std::max(max_in_flight, r.max_in_flight);
    cadence = cadence && r.cadence_ok && r.tick_count == 10000;
    monotone = monotone && r.monotone_stitching;
  }
  const uac::LatencyModel fixed{3.0 * P, 0.0, 0.0, 0.0};
  const bool reproducible =
      uac::to_json(uac::simulate(u, T, fixed, 10000, 1)).dump() == uac::to_json(uac::simulate(u, T, fixed, 10000, 1)).dump() &&
      uac::to_json(uac::simulate(u, T, lat, 10000, 4)).dump() == uac::to_json(uac::simulate(u, T, lat, 10000, 4)).dump();
  const double secs = seconds_since(t0);

  // The same check at the default safety factor, for the record.
  const auto th_default = uac::trigger_threshold(median, P, desk.uac.safety);
  const uac::LatencyModel lat_default{median, 0.4, static_cast<double>(T - th_default) * P, 0.0};
  std::size_t underflow_default = 0, violations_default = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = uac::simulate(desk.uac, T, lat_default, 10000, seed);
    underflow_default += r.underflow_count;
    violations_default += r.prefix_violation_count;
  }
  detail = {{"safety", u.safety},
            {"threshold", threshold},
            {"cap_ms", lat.cap_ms},
            {"underflow", underflow},
            {"prefix_violations", violations},
            {"default_safety", desk.uac.safety},
            {"default_threshold", th_default},
            {"default_cap_ms", lat_default.cap_ms},
            {"default_underflow", underflow_default},
            {"default_prefix_violations", violations_default}};

  const bool ok = underflow == 0 && violations == 0 && cadence && monotone && max_in_flight == 1 && reproducible && secs < 30.0;
  return {ok, "20 x 10000 steps at safety " + fmt(u.safety) + " (threshold " + std::to_string(threshold) + ", cap " +
                  fmt(lat.cap_ms) + " ms): underflow " + std::to_string(underflow) + ", prefix violations " +
                  std::to_string(violations) + ", cadence " + (cadence ? "ok" : "broken") + ", max in flight " +
                  std::to_string(max_in_flight) + ", reproducible " + (reproducible ? "yes" : "no") + ", " +
                  fmt(secs, 3) + " s; at default safety " + fmt(desk.uac.safety) + " (cap " + fmt(lat_default.cap_ms) +
                  " ms): underflow " + std::to_string(underflow_default) + ", prefix violations " +
                  std::to_string(violations_default)};
}

// ------------------------------------------------------------ criterion 9

std::string bytes_of(const std::function<void(std::ostream&)>& write) {
  std::ostringstream os(std::ios::binary);
  write(os);
  return os.str();
}

Outcome formats() {
  std::vector<std::string> bad;
  // Dataset.
  RunConfig c = micro_config();
  c.world.episode_len = 24;
  c.world.n_episodes = 4;
  const Dataset ds = generate_dataset(c.world, 3);
  const std::string d1 = bytes_of([&](std::ostream& os) { write_dataset(os, ds); });
  std::istringstream din(d1, std::ios::binary);
  const Dataset back = read_dataset(din);
  const std::string d2 = bytes_of([&](std::ostream& os) { write_dataset(os, back); });
  if (d1 != d2 || !(back.dims == ds.dims) || back.chunks != ds.chunks) bad.push_back("dataset");

  // Checkpoint and resume.
  c.train.batch = 4;
  c.train.val_every = 3;
  c.train.ckpt_every = 0;
  c.train.lr = 3e-3;
  Trainer straight(c, ds);
  straight.run(6, {});
  Trainer first(c, ds);
  first.run(3, {});
  const std::string k1 = bytes_of([&](std::ostream& os) { write_checkpoint(os, first.checkpoint()); });
  std::istringstream kin(k1, std::ios::binary);
  const Checkpoint reloaded = read_checkpoint(kin);
  if (bytes_of([&](std::ostream& os) { write_checkpoint(os, reloaded); }) != k1) bad.push_back("checkpoint");
  Trainer resumed = Trainer::resume(reloaded, ds);
  resumed.run(6, {});
  if (bytes_of([&](std::ostream& os) { write_checkpoint(os, resumed.checkpoint()); }) !=
      bytes_of([&](std::ostream& os) { write_checkpoint(os, straight.checkpoint()); }))
    bad.push_back("resume");

  // Wire protocol, with payload sizes that exercise every base64 tail.
  std::mt19937_64 rng(9);
  std::normal_distribution<float> g;
  std::size_t wire_cases = 0;
  for (std::size_t n = 0; n < 50; ++n) {
    uac::ChunkRequest req;
    req.request_id = rng();
    req.t_req = static_cast<std::int64_t>(rng() % 100000);
    req.instruction_tokens = {static_cast<std::uint32_t>(n % 5), 7};
    req.context_frames.resize(n * 3 + n % 4);
    for (auto& x : req.context_frames) x = g(rng);
    req.state = {g(rng), g(rng), g(rng), g(rng)};
    req.client_send_ms = static_cast<double>(rng() % 1000000) / 7.0;
    uac::ChunkResponse resp;
    resp.request_id = req.request_id;
    for (std::size_t i = 0; i < 8; ++i) resp.actions.push_back({double(g(rng)), double(g(rng))});
    resp.server_compute_ms = static_cast<double>(n) * 0.125;
    if (!(uac::decode_request(uac::encode_request(req)) == req) || !(uac::decode_response(uac::encode_response(resp)) == resp))
      bad.push_back("wire case " + std::to_string(n));
    ++wire_cases;
  }
  std::string d = "dataset bitwise, checkpoint bitwise, resume bitwise, " + std::to_string(wire_cases) + " wire round trips";
  if (!bad.empty()) {
    d += "; failed:";
    for (const auto& b : bad) d += " " + b;
  }
  return {bad.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string workdir = "acceptance_work", config_dir = LWAM_CONFIG_DIR;
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Cache for trained desk models and reports");
  app.add_option("--config-dir", config_dir, "Directory holding desk.json and paper.json");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work(workdir);
  fs::create_directories(work);
  const std::set<int> selected(only.begin(), only.end());
  const auto want = [&](int k) { return selected.empty() || selected.count(k) > 0; };

  json report = json::object();
  int failures = 0;
  const auto record = [&](int k, const char* name, const std::function<Outcome()>& fn) {
    if (!want(k)) return;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::cout << "criterion " << k << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail << std::endl;
    report[std::to_string(k)] = {{"name", name}, {"pass", o.pass}, {"detail", o.detail}, {"seconds", seconds_since(t0)}};
  };

  record(1, "gradient soundness", gradient_soundness);
  record(2, "mask and packing", mask_and_packing);
  record(3, "packed vs two-pass", packed_equivalence);
  record(4, "analytic loss values", analytic_losses);
  record(5, "flow sampler and hyperparameter parity", [&] { return flow_sampler_and_parity(config_dir); });

  std::optional<RunConfig> desk;
  std::optional<Dataset> data;
  const auto desk_data = [&]() -> const Dataset& {
    if (!desk) desk = load_config(config_dir + "/desk.json");
    if (!data) data = generate_dataset(desk->world, 0);
    return *data;
  };
  record(6, "desk training", [&] { return desk_training((desk_data(), *desk), *data, work); });
  json method_detail;
  record(7, "method signal", [&] { return method_signal((desk_data(), *desk), *data, work, method_detail); });
  if (want(6) || want(7)) {
    const std::string sweep = flow_step_sweep(*desk, work);
    std::cout << "info  first-action error vs expert by flow steps: " << sweep << std::endl;
    report["flow_step_sweep"] = sweep;
  }
  if (!method_detail.is_null()) report["method_detail"] = method_detail;
  json uac_detail;
  record(8, "asynchronous chunking", [&] {
    if (!desk) desk = load_config(config_dir + "/desk.json");
    return uac_properties(*desk, uac_detail);
  });
  if (!uac_detail.is_null()) report["uac_detail"] = uac_detail;
  record(9, "formats", formats);

  std::ofstream(work / "acceptance.json") << report.dump(2) << "\n";
  std::cout << (failures == 0 ? "all selected criteria pass" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
