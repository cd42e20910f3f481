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
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace lwam {

using json = nlohmann::json;

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::invalid_argument(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct WorldConfig {
  double a_max = 0.06;
  double v_max = 0.05;
  double capture_radius = 0.05;
  double min_start_dist = 0.25;
  std::uint32_t episode_len = 64;
  std::uint32_t context_res = 16;
  std::uint32_t future_res = 16;
  double blob_sigma = 1.0;
  std::uint32_t n_goals = 3;
  std::uint32_t n_instr = 2;
  std::uint32_t H = 2;
  std::uint32_t T = 8;
  std::uint32_t n_future = 4;
  std::uint32_t future_stride = 2;
  std::uint32_t chunk_stride = 4;
  std::uint32_t n_episodes = 300;
  bool operator==(const WorldConfig&) const = default;
};

struct ModelConfig {
  std::uint32_t K = 4;
  std::uint32_t d = 64;
  std::uint32_t n_layers = 4;
  std::uint32_t n_heads = 4;
  std::uint32_t ffn_mult_understanding = 4;
  std::uint32_t ffn_mult_action = 2;
  std::uint32_t align_last_L = 2;
  std::uint32_t patch = 8;
  std::uint32_t future_patch = 8;
  std::uint32_t resampler_layers = 2;
  std::uint32_t time_features = 16;
  std::uint32_t vocab = 8;
  std::uint64_t frozen_seed = 1234;
  double rope_base = 10000.0;
  bool operator==(const ModelConfig&) const = default;
};

struct LossConfig {
  double w_align = 1e-3;
  double w_norm = 1e-4;
  double w_rank = 1e-4;
  std::optional<double> tau;               // default sqrt(d)
  std::optional<std::uint32_t> n_proj;     // default min(d, 64)
  bool align_stop_posterior = false;
  bool operator==(const LossConfig&) const = default;
};

struct TrainConfig {
  std::uint32_t batch = 32;
  std::uint32_t steps = 2000;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::string mode = "pretrain";  // pretrain | posttrain
  std::string ablation = "dual";  // dual | prior_only | no_latent
  std::uint32_t ckpt_every = 500;
  double val_fraction = 0.1;
  std::uint32_t val_max_chunks = 256;
  std::uint32_t val_every = 100;
  bool operator==(const TrainConfig&) const = default;
};

struct SamplerConfig {
  std::uint32_t n_steps = 10;
  std::uint64_t seed = 0;
  std::string dtype = "f64";  // f32 | f64
  std::uint32_t execute_steps = 4;
  bool operator==(const SamplerConfig&) const = default;
};

struct UacConfig {
  double control_period_ms = 50.0;
  double safety = 1.5;
  double delay_init_ms = 80.0;
  double alpha = 0.2;
  double latency_median_ms = 80.0;
  double latency_sigma = 0.4;
  double latency_cap_ms = 0.0;  // 0 disables the cap
  double server_compute_ms = 0.0;
  std::uint32_t port = 7777;
  std::string addr = "127.0.0.1:7777";
  bool operator==(const UacConfig&) const = default;
};

struct RunConfig {
  WorldConfig world;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  SamplerConfig sampler;
  UacConfig uac;
  bool operator==(const RunConfig&) const = default;

  double tau() const { return loss.tau.value_or(std::sqrt(static_cast<double>(model.d))); }
  std::uint32_t n_proj() const { return loss.n_proj.value_or(std::min<std::uint32_t>(model.d, 64)); }
};

namespace detail {

// Reads keys out of one JSON object section, rejecting unknown ones.
class SectionReader {
 public:
  SectionReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    const std::string p = path_ + "." + key;
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!v.is_boolean()) throw ConfigError(p, "expected a boolean");
        out = v.get<bool>();
      } else if constexpr (std::is_same_v<V, std::string>) {
        if (!v.is_string()) throw ConfigError(p, "expected a string");
        out = v.get<std::string>();
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!v.is_number()) throw ConfigError(p, "expected a number");
        out = v.get<V>();
      } else {
        if (!v.is_number_integer() || (v.is_number_integer() && v.get<std::int64_t>() < 0))
          throw ConfigError(p, "expected a non-negative integer");
        out = v.get<V>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(p, e.what());
    }
  }

  template <typename V>
  void read(const char* key, std::optional<V>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    V v{};
    read(key, v);
    out = v;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + "." + it.key(), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) throw ConfigError(path, what);
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  using detail::require;
  const auto& w = c.world;
  require(w.a_max > 0, "world.a_max", "must be > 0");
  require(w.v_max >= 0, "world.v_max", "must be >= 0");
  require(w.capture_radius > 0, "world.capture_radius", "must be > 0");
  require(w.H >= 1, "world.H", "must be >= 1");
  require(w.T >= 1, "world.T", "must be >= 1");
  require(w.n_instr >= 1, "world.n_instr", "must be >= 1");
  require(w.n_goals >= 1 && w.n_goals <= 4, "world.n_goals", "must be in [1, 4]");
  require(w.n_future >= 1 && w.n_future <= w.T, "world.n_future", "must be in [1, world.T]");
  require(w.future_stride >= 1, "world.future_stride", "must be >= 1");
  require(w.chunk_stride >= 1, "world.chunk_stride", "must be >= 1");
  require(w.context_res >= 1 && w.future_res >= 1, "world.context_res", "resolutions must be >= 1");
  const auto& m = c.model;
  require(m.K >= 1, "model.K", "must be >= 1");
  require(m.d >= 2, "model.d", "must be >= 2");
  require(m.n_heads >= 1 && m.d % m.n_heads == 0, "model.n_heads", "must divide model.d");
  require((m.d / m.n_heads) % 2 == 0, "model.n_heads", "head width must be even for rotary positions");
  require(m.n_layers == 0 || (m.align_last_L >= 1 && m.align_last_L <= m.n_layers), "model.align_last_L",
          "must be in [1, model.n_layers]");
  require(m.patch >= 1 && w.context_res % m.patch == 0, "model.patch", "must divide world.context_res");
  require(m.future_patch >= 1 && w.future_res % m.future_patch == 0, "model.future_patch",
          "must divide world.future_res");
  require(m.time_features >= 4 && m.time_features % 2 == 0, "model.time_features", "must be even and >= 4");
  require(m.vocab >= 1 + w.n_goals + 1, "model.vocab", "too small for the instruction tokens");
  require(m.ffn_mult_understanding >= 1 && m.ffn_mult_action >= 1, "model.ffn_mult_action", "must be >= 1");
  require(c.loss.w_align >= 0, "loss.w_align", "must be >= 0");
  require(c.loss.w_norm >= 0, "loss.w_norm", "must be >= 0");
  require(c.loss.w_rank >= 0, "loss.w_rank", "must be >= 0");
  require(!c.loss.tau || *c.loss.tau > 0, "loss.tau", "must be > 0");
  require(!c.loss.n_proj || *c.loss.n_proj >= 1, "loss.n_proj", "must be >= 1");
  const auto& t = c.train;
  require(t.batch >= 1, "train.batch", "must be >= 1");
  require(t.mode == "pretrain" || t.mode == "posttrain", "train.mode", "must be pretrain or posttrain");
  require(t.ablation == "dual" || t.ablation == "prior_only" || t.ablation == "no_latent", "train.ablation",
          "must be dual, prior_only or no_latent");
  require(t.lr >= 0, "train.lr", "must be >= 0");
  require(t.beta1 >= 0 && t.beta1 < 1, "train.beta1", "must be in [0, 1)");
  require(t.beta2 >= 0 && t.beta2 < 1, "train.beta2", "must be in [0, 1)");
  require(t.val_fraction > 0 && t.val_fraction < 1, "train.val_fraction", "must be in (0, 1)");
  require(t.grad_clip >= 0, "train.grad_clip", "must be >= 0");
  require(c.sampler.n_steps >= 1, "sampler.n_steps", "must be >= 1");
  require(c.sampler.dtype == "f32" || c.sampler.dtype == "f64", "sampler.dtype", "must be f32 or f64");
  require(c.sampler.execute_steps >= 1 && c.sampler.execute_steps <= w.T, "sampler.execute_steps",
          "must be in [1, world.T]");
  const auto& u = c.uac;
  require(u.control_period_ms > 0, "uac.control_period_ms", "must be > 0");
  require(u.safety > 0, "uac.safety", "must be > 0");
  require(u.alpha > 0 && u.alpha <= 1, "uac.alpha", "must be in (0, 1]");
  require(u.delay_init_ms >= 0, "uac.delay_init_ms", "must be >= 0");
  require(u.latency_median_ms >= 0, "uac.latency_median_ms", "must be >= 0");
  require(u.latency_sigma >= 0, "uac.latency_sigma", "must be >= 0");
  require(u.port <= 65535, "uac.port", "must be a TCP port");
}

inline json to_json(const RunConfig& c) {
  auto opt = [](const auto& o) -> json { return o ? json(*o) : json(nullptr); };
  const auto& w = c.world;
  const auto& m = c.model;
  const auto& l = c.loss;
  const auto& t = c.train;
  const auto& s = c.sampler;
  const auto& u = c.uac;
  return json{
      {"world",
       {{"a_max", w.a_max}, {"v_max", w.v_max}, {"capture_radius", w.capture_radius}, {"min_start_dist", w.min_start_dist},
        {"episode_len", w.episode_len}, {"context_res", w.context_res}, {"future_res", w.future_res},
        {"blob_sigma", w.blob_sigma}, {"n_goals", w.n_goals}, {"n_instr", w.n_instr}, {"H", w.H}, {"T", w.T},
        {"n_future", w.n_future}, {"future_stride", w.future_stride}, {"chunk_stride", w.chunk_stride},
        {"n_episodes", w.n_episodes}}},
      {"model",
       {{"K", m.K}, {"d", m.d}, {"n_layers", m.n_layers}, {"n_heads", m.n_heads},
        {"ffn_mult_understanding", m.ffn_mult_understanding}, {"ffn_mult_action", m.ffn_mult_action},
        {"align_last_L", m.align_last_L}, {"patch", m.patch}, {"future_patch", m.future_patch},
        {"resampler_layers", m.resampler_layers}, {"time_features", m.time_features}, {"vocab", m.vocab},
        {"frozen_seed", m.frozen_seed}, {"rope_base", m.rope_base}}},
      {"loss",
       {{"w_align", l.w_align}, {"w_norm", l.w_norm}, {"w_rank", l.w_rank}, {"tau", opt(l.tau)}, {"n_proj", opt(l.n_proj)},
        {"align_stop_posterior", l.align_stop_posterior}}},
      {"train",
       {{"batch", t.batch}, {"steps", t.steps}, {"lr", t.lr}, {"weight_decay", t.weight_decay}, {"beta1", t.beta1},
        {"beta2", t.beta2}, {"adam_eps", t.adam_eps}, {"grad_clip", t.grad_clip}, {"seed", t.seed}, {"mode", t.mode},
        {"ablation", t.ablation}, {"ckpt_every", t.ckpt_every}, {"val_fraction", t.val_fraction},
        {"val_max_chunks", t.val_max_chunks}, {"val_every", t.val_every}}},
      {"sampler", {{"n_steps", s.n_steps}, {"seed", s.seed}, {"dtype", s.dtype}, {"execute_steps", s.execute_steps}}},
      {"uac",
       {{"control_period_ms", u.control_period_ms}, {"safety", u.safety}, {"delay_init_ms", u.delay_init_ms},
        {"alpha", u.alpha}, {"latency_median_ms", u.latency_median_ms}, {"latency_sigma", u.latency_sigma},
        {"latency_cap_ms", u.latency_cap_ms}, {"server_compute_ms", u.server_compute_ms}, {"port", u.port},
        {"addr", u.addr}}},
  };
}

// Parses a (possibly partial) config over the defaults, then validates.
inline RunConfig config_from_json(const json& j, RunConfig c = {}) {
  detail::SectionReader root(j, "config");
  std::set<std::string> sections{"world", "model", "loss", "train", "sampler", "uac"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!sections.count(it.key())) throw ConfigError(it.key(), "unknown section");
  if (j.contains("world")) {
    detail::SectionReader r(j.at("world"), "world");
    auto& w = c.world;
    r.read("a_max", w.a_max);
    r.read("v_max", w.v_max);
    r.read("capture_radius", w.capture_radius);
    r.read("min_start_dist", w.min_start_dist);
    r.read("episode_len", w.episode_len);
    r.read("context_res", w.context_res);
    r.read("future_res", w.future_res);
    r.read("blob_sigma", w.blob_sigma);
    r.read("n_goals", w.n_goals);
    r.read("n_instr", w.n_instr);
    r.read("H", w.H);
    r.read("T", w.T);
    r.read("n_future", w.n_future);
    r.read("future_stride", w.future_stride);
    r.read("chunk_stride", w.chunk_stride);
    r.read("n_episodes", w.n_episodes);
    r.finish();
  }
  if (j.contains("model")) {
    detail::SectionReader r(j.at("model"), "model");
    auto& m = c.model;
    r.read("K", m.K);
    r.read("d", m.d);
    r.read("n_layers", m.n_layers);
    r.read("n_heads", m.n_heads);
    r.read("ffn_mult_understanding", m.ffn_mult_understanding);
    r.read("ffn_mult_action", m.ffn_mult_action);
    r.read("align_last_L", m.align_last_L);
    r.read("patch", m.patch);
    r.read("future_patch", m.future_patch);
    r.read("resampler_layers", m.resampler_layers);
    r.read("time_features", m.time_features);
    r.read("vocab", m.vocab);
    r.read("frozen_seed", m.frozen_seed);
    r.read("rope_base", m.rope_base);
    r.finish();
  }
  if (j.contains("loss")) {
    detail::SectionReader r(j.at("loss"), "loss");
    auto& l = c.loss;
    r.read("w_align", l.w_align);
    r.read("w_norm", l.w_norm);
    r.read("w_rank", l.w_rank);
    r.read("tau", l.tau);
    r.read("n_proj", l.n_proj);
    r.read("align_stop_posterior", l.align_stop_posterior);
    r.finish();
  }
  if (j.contains("train")) {
    detail::SectionReader r(j.at("train"), "train");
    auto& t = c.train;
    r.read("batch", t.batch);
    r.read("steps", t.steps);
    r.read("lr", t.lr);
    r.read("weight_decay", t.weight_decay);
    r.read("beta1", t.beta1);
    r.read("beta2", t.beta2);
    r.read("adam_eps", t.adam_eps);
    r.read("grad_clip", t.grad_clip);
    r.read("seed", t.seed);
    r.read("mode", t.mode);
    r.read("ablation", t.ablation);
    r.read("ckpt_every", t.ckpt_every);
    r.read("val_fraction", t.val_fraction);
    r.read("val_max_chunks", t.val_max_chunks);
    r.read("val_every", t.val_every);
    r.finish();
  }
  if (j.contains("sampler")) {
    detail::SectionReader r(j.at("sampler"), "sampler");
    auto& s = c.sampler;
    r.read("n_steps", s.n_steps);
    r.read("seed", s.seed);
    r.read("dtype", s.dtype);
    r.read("execute_steps", s.execute_steps);
    r.finish();
  }
  if (j.contains("uac")) {
    detail::SectionReader r(j.at("uac"), "uac");
    auto& u = c.uac;
    r.read("control_period_ms", u.control_period_ms);
    r.read("safety", u.safety);
    r.read("delay_init_ms", u.delay_init_ms);
    r.read("alpha", u.alpha);
    r.read("latency_median_ms", u.latency_median_ms);
    r.read("latency_sigma", u.latency_sigma);
    r.read("latency_cap_ms", u.latency_cap_ms);
    r.read("server_compute_ms", u.server_compute_ms);
    r.read("port", u.port);
    r.read("addr", u.addr);
    r.finish();
  }
  validate(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open config file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path, e.what());
  }
  return config_from_json(j);
}

}  // namespace lwam
