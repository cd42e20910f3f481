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


// Command-line entry point. Exit codes: 0 success, 1 usage or validation
// error, 2 runtime fault (including a failed property suite).

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lwam/checkpoint.hpp"
#include "lwam/dataset.hpp"
#include "lwam/evaluate.hpp"
#include "lwam/inference.hpp"
#include "lwam/properties.hpp"
#include "lwam/trainer.hpp"
#include "lwam/uac.hpp"

#ifndef LWAM_VERSION
#define LWAM_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace lwam;

namespace {

constexpr int kExitOk = 0, kExitUsage = 1, kExitFault = 2;

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

// Raised for property-suite failures so they map to the fault exit code.
struct SuiteFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Config file plus flag overrides. Flags win over the file, the file over
// built-in defaults.
struct ConfigFlags {
  std::string path;
  RunConfig load() const { return path.empty() ? RunConfig{} : load_config(path); }
  void add(CLI::App* app) { app->add_option("--config", path, "JSON run configuration")->check(CLI::ExistingFile); }
};

template <typename T, typename U>
void override(const std::optional<T>& flag, U& target) {
  if (flag) target = *flag;
}

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  ConfigFlags cfg;
  std::uint64_t seed = 0;
  std::optional<std::uint32_t> episodes;
  std::string out = "-";
};

int gen_data(const GenDataArgs& a) {
  RunConfig c = a.cfg.load();
  override(a.episodes, c.world.n_episodes);
  validate(c);
  const Dataset ds = generate_dataset(c.world, a.seed);
  if (a.out == "-") {
    write_dataset(std::cout, ds);
    std::cout.flush();
  } else {
    save_dataset(a.out, ds);
    std::cerr << "wrote " << ds.chunks.size() << " chunks to " << a.out << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  ConfigFlags cfg;
  std::string data;
  std::uint64_t data_seed = 0;
  std::string out_dir = "run";
  std::string resume;
  std::optional<std::uint32_t> steps, batch, ckpt_every, val_every;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::string> mode, ablation;
};

int train(const TrainArgs& a) {
  RunConfig c;
  Checkpoint resumed;
  if (!a.resume.empty()) {
    resumed = load_checkpoint(a.resume);
    c = resumed.config;
  } else {
    c = a.cfg.load();
  }
  override(a.steps, c.train.steps);
  override(a.batch, c.train.batch);
  override(a.ckpt_every, c.train.ckpt_every);
  override(a.val_every, c.train.val_every);
  override(a.seed, c.train.seed);
  override(a.lr, c.train.lr);
  override(a.mode, c.train.mode);
  override(a.ablation, c.train.ablation);
  validate(c);

  const Dataset ds = a.data.empty() ? generate_dataset(c.world, a.data_seed) : load_dataset(a.data);
  std::optional<Trainer> tr;
  if (a.resume.empty()) {
    tr.emplace(c, ds);
  } else {
    resumed.config = c;
    tr.emplace(Trainer::resume(resumed, ds));
  }

  fs::create_directories(a.out_dir);
  write_json(to_json(c), (fs::path(a.out_dir) / "config.json").string());
  std::ofstream metrics((fs::path(a.out_dir) / "metrics.jsonl").string(), a.resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw std::runtime_error("cannot write metrics in " + a.out_dir);
  const auto ckpt_path = [&](std::uint64_t step) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06llu.lwck", static_cast<unsigned long long>(step));
    return (fs::path(a.out_dir) / name).string();
  };
  std::cerr << "training " << c.train.ablation << " for " << c.train.steps << " steps on " << tr->train_size()
            << " chunks (" << tr->val_size() << " validation)\n";
  tr->run(
      c.train.steps,
      [&](const StepMetrics& m) {
        metrics << to_json(m).dump() << "\n";
        if (m.val_fm_prior) std::cerr << "step " << m.step << " val_fm_prior " << *m.val_fm_prior << "\n";
      },
      [&](const Trainer& t) { save_checkpoint(ckpt_path(t.step_count()), t.checkpoint()); });
  const std::string final_path = (fs::path(a.out_dir) / "final.lwck").string();
  save_checkpoint(final_path, tr->checkpoint());
  std::cerr << "wrote " << final_path << " at step " << tr->step_count() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  ConfigFlags env;
  std::string checkpoint;
  std::string policy = "model";
  std::size_t episodes = 200;
  std::uint64_t seed = 1000;
  std::optional<std::uint32_t> n_steps, execute_steps;
  std::optional<std::string> dtype;
  std::string data;
  std::string report = "-";
};

int eval(const EvalArgs& a) {
  RunConfig c;
  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) {
    ck = load_checkpoint(a.checkpoint);
    c = ck->config;
  } else if (a.policy == "model") {
    throw ConfigError("--checkpoint", "required for the model policy");
  }
  WorldConfig env = a.env.path.empty() ? c.world : a.env.load().world;
  if (ck) check_env_matches(env, ck->config);
  override(a.n_steps, c.sampler.n_steps);
  override(a.execute_steps, c.sampler.execute_steps);
  override(a.dtype, c.sampler.dtype);
  validate(c);

  std::optional<Policy> policy;
  ChunkPolicy chunk_policy;
  if (a.policy == "model") {
    policy.emplace(*ck, c.sampler.dtype);
    chunk_policy = model_policy(*policy, c.sampler.n_steps);
  } else if (a.policy == "expert") {
    chunk_policy = expert_policy(env);
  } else {
    chunk_policy = random_policy(env);
  }
  EvalResult r = evaluate(chunk_policy, env, a.episodes, a.seed, c.sampler.execute_steps);
  if (ck && !a.data.empty()) {
    const Dataset ds = load_dataset(a.data);
    r.mean_fm_val = Trainer::resume(*ck, ds).validation_fm();
  }
  json j = to_json(r);
  j["policy"] = a.policy;
  write_json(j, a.report);
  return kExitOk;
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string checkpoint;
  std::optional<std::uint32_t> port, n_steps;
  std::optional<std::string> dtype;
  std::uint64_t seed = 0;
  std::size_t probe = 20;
};

int serve(const ServeArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  RunConfig c = ck.config;
  override(a.port, c.uac.port);
  override(a.n_steps, c.sampler.n_steps);
  override(a.dtype, c.sampler.dtype);
  validate(c);
  const Policy policy(ck, c.sampler.dtype);

  std::mt19937_64 rng(a.seed);
  const WorldState s = sample_initial_state(rng, c.world);
  const auto frame = render(s, c.world.context_res, c.world);
  const auto probe = latency_probe(policy, observe({frame}, s, c.world), a.probe, c.sampler.n_steps);
  std::cerr << "latency probe (" << c.sampler.dtype << ", " << c.sampler.n_steps << " flow steps): mean " << probe.mean_ms
            << " ms, p99 " << probe.p99_ms << " ms over " << probe.n << " calls\n";

  uac::Socket listener = uac::listen_tcp(static_cast<std::uint16_t>(c.uac.port));
  std::cerr << "listening on port " << uac::local_port(listener) << "\n";
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const auto stats = uac::serve(listener, policy, a.seed, c.sampler.n_steps, g_stop,
                                [](const std::string& msg) { std::cerr << msg << "\n"; });
  std::cerr << "served " << stats.requests << " requests over " << stats.connections << " connections ("
            << stats.errors << " errors)\n";
  return kExitOk;
}

// ---------------------------------------------------------------- run-client

struct ClientArgs {
  ConfigFlags cfg;
  std::optional<std::string> addr;
  std::optional<double> hz, safety, delay_init_ms;
  std::uint64_t steps = 200, seed = 0;
  std::string report = "-";
};

int run_client(const ClientArgs& a) {
  RunConfig c = a.cfg.load();
  override(a.addr, c.uac.addr);
  if (a.hz) {
    if (*a.hz <= 0) throw ConfigError("--hz", "must be > 0");
    c.uac.control_period_ms = 1000.0 / *a.hz;
  }
  override(a.safety, c.uac.safety);
  override(a.delay_init_ms, c.uac.delay_init_ms);
  validate(c);
  uac::ClientOptions opt;
  opt.uac = c.uac;
  opt.world = c.world;
  opt.steps = a.steps;
  opt.seed = a.seed;
  uac::Socket conn = uac::connect_tcp(c.uac.addr);
  write_json(uac::to_json(uac::run_client(conn, opt)), a.report);
  return kExitOk;
}

// ---------------------------------------------------------------- sim-uac

struct SimArgs {
  ConfigFlags cfg;
  std::optional<double> median, sigma, cap, safety, period, compute;
  std::uint64_t steps = 10000, seed = 0;
  bool no_traces = false;
  std::string report = "-";
};

int sim_uac(const SimArgs& a) {
  RunConfig c = a.cfg.load();
  override(a.median, c.uac.latency_median_ms);
  override(a.sigma, c.uac.latency_sigma);
  override(a.cap, c.uac.latency_cap_ms);
  override(a.safety, c.uac.safety);
  override(a.period, c.uac.control_period_ms);
  override(a.compute, c.uac.server_compute_ms);
  validate(c);
  const auto rep = uac::simulate(c.uac, c.world.T, uac::LatencyModel::from(c.uac), a.steps, a.seed);
  write_json(uac::to_json(rep, !a.no_traces), a.report);
  if (a.report != "-")
    std::cerr << "underflow " << rep.underflow_count << ", prefix violations " << rep.prefix_violation_count
              << ", triggers " << rep.trigger_count << ", mean occupancy " << rep.occupancy_mean << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- suites

int report_suite(const std::vector<PropertyRow>& rows) {
  print_table(std::cout, rows);
  if (!all_pass(rows)) throw SuiteFailed("property suite failed");
  std::cout << "all properties hold\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent world-action model: data, training, inference and asynchronous serving"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("lwam ") + LWAM_VERSION + " (dataset format v" +
                                        std::to_string(kDatasetVersion) + ", checkpoint format v" +
                                        std::to_string(kCheckpointVersion) + ", wire protocol v1)");

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Generate expert demonstrations");
  gd.cfg.add(c_gen);
  c_gen->add_option("--seed", gd.seed, "Dataset seed");
  c_gen->add_option("--episodes", gd.episodes, "Episode count (overrides world.n_episodes)");
  c_gen->add_option("--out", gd.out, "Output file, '-' for stdout");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train a model");
  tr.cfg.add(c_train);
  c_train->add_option("--data", tr.data, "Dataset file; generated from the config when absent")->check(CLI::ExistingFile);
  c_train->add_option("--data-seed", tr.data_seed, "Seed for the generated dataset");
  c_train->add_option("--out-dir", tr.out_dir, "Directory for metrics and checkpoints");
  c_train->add_option("--resume", tr.resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  c_train->add_option("--steps", tr.steps, "Total optimizer steps (0 writes the initial checkpoint)");
  c_train->add_option("--batch", tr.batch, "Chunks per batch");
  c_train->add_option("--ckpt-every", tr.ckpt_every, "Checkpoint interval in steps, 0 disables");
  c_train->add_option("--val-every", tr.val_every, "Validation interval in steps");
  c_train->add_option("--seed", tr.seed, "Training seed");
  c_train->add_option("--lr", tr.lr, "Learning rate");
  c_train->add_option("--mode", tr.mode, "Objective")->check(CLI::IsMember({"pretrain", "posttrain"}));
  c_train->add_option("--ablation", tr.ablation, "Model variant")->check(CLI::IsMember({"dual", "prior_only", "no_latent"}));

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Closed-loop evaluation on the moving-target world");
  ev.env.add(c_eval);
  c_eval->add_option("--checkpoint", ev.checkpoint, "Trained model")->check(CLI::ExistingFile);
  c_eval->add_option("--policy", ev.policy, "Controller to evaluate")->check(CLI::IsMember({"model", "expert", "random"}));
  c_eval->add_option("--episodes", ev.episodes, "Episode count");
  c_eval->add_option("--seed", ev.seed, "Episode seed");
  c_eval->add_option("--n-steps", ev.n_steps, "Flow integration steps");
  c_eval->add_option("--execute-steps", ev.execute_steps, "Actions executed per chunk before replanning");
  c_eval->add_option("--dtype", ev.dtype, "Inference precision")->check(CLI::IsMember({"f32", "f64"}));
  c_eval->add_option("--data", ev.data, "Also report validation flow-matching loss on this dataset")
      ->check(CLI::ExistingFile);
  c_eval->add_option("--report", ev.report, "Output JSON file, '-' for stdout");

  ServeArgs sv;
  auto* c_serve = app.add_subcommand("serve", "Serve action chunks over TCP");
  c_serve->add_option("--checkpoint", sv.checkpoint, "Trained model")->required()->check(CLI::ExistingFile);
  c_serve->add_option("--port", sv.port, "TCP port, 0 picks a free one");
  c_serve->add_option("--dtype", sv.dtype, "Inference precision")->check(CLI::IsMember({"f32", "f64"}));
  c_serve->add_option("--n-steps", sv.n_steps, "Flow integration steps");
  c_serve->add_option("--seed", sv.seed, "Noise seed");
  c_serve->add_option("--probe", sv.probe, "Latency probe repeats at startup");

  ClientArgs cl;
  auto* c_client = app.add_subcommand("run-client", "Run the asynchronous control client against a server");
  cl.cfg.add(c_client);
  c_client->add_option("--addr", cl.addr, "host:port");
  c_client->add_option("--hz", cl.hz, "Control rate");
  c_client->add_option("--safety", cl.safety, "Trigger safety factor");
  c_client->add_option("--delay-init-ms", cl.delay_init_ms, "Initial round-trip estimate");
  c_client->add_option("--steps", cl.steps, "Control steps to run");
  c_client->add_option("--seed", cl.seed, "World seed");
  c_client->add_option("--report", cl.report, "Output JSON file, '-' for stdout");

  SimArgs sm;
  auto* c_sim = app.add_subcommand("sim-uac", "Virtual-clock simulation of the asynchronous client");
  sm.cfg.add(c_sim);
  c_sim->add_option("--latency-median-ms", sm.median, "Median round trip");
  c_sim->add_option("--latency-sigma", sm.sigma, "Log-normal spread, 0 for fixed latency");
  c_sim->add_option("--latency-cap-ms", sm.cap, "0 disables the cap");
  c_sim->add_option("--server-compute-ms", sm.compute, "Added to every round trip");
  c_sim->add_option("--safety", sm.safety, "Trigger safety factor");
  c_sim->add_option("--period-ms", sm.period, "Control period");
  c_sim->add_option("--steps", sm.steps, "Virtual control steps");
  c_sim->add_option("--seed", sm.seed, "Latency seed");
  c_sim->add_flag("--no-traces", sm.no_traces, "Omit per-tick traces from the report");
  c_sim->add_option("--report", sm.report, "Output JSON file, '-' for stdout");

  std::size_t grad_seeds = 50;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference checks of every loss term");
  c_grad->add_option("--seeds", grad_seeds, "Random micro models");

  std::size_t mask_seeds = 100;
  auto* c_mask = app.add_subcommand("maskcheck", "Mask, packing and branch-equivalence properties");
  c_mask->add_option("--seeds", mask_seeds, "Random layouts");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_gen) return gen_data(gd);
    if (*c_train) return train(tr);
    if (*c_eval) return eval(ev);
    if (*c_serve) return serve(sv);
    if (*c_client) return run_client(cl);
    if (*c_sim) return sim_uac(sm);
    if (*c_grad) {
      auto rows = gradcheck_suite(grad_seeds);
      for (auto& r : analytic_loss_suite()) rows.push_back(r);
      return report_suite(rows);
    }
    if (*c_mask) {
      auto rows = maskcheck_suite(mask_seeds);
      for (auto& r : packing_equivalence_suite(20)) rows.push_back(r);
      return report_suite(rows);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFault;
  }
  return kExitUsage;
}
