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
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lwam/checkpoint.hpp"
#include "lwam/dataset.hpp"
#include "lwam/model.hpp"
#include "lwam/objectives.hpp"
#include "lwam/optimizer.hpp"

namespace lwam {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline TrainMode parse_mode(const std::string& s) {
  if (s == "pretrain") return TrainMode::Pretrain;
  if (s == "posttrain") return TrainMode::Posttrain;
  throw ConfigError("train.mode", "unknown mode " + s);
}

inline void check_dataset_matches(const DatasetDims& d, const RunConfig& c) {
  DatasetDims want = DatasetDims::from(c.world);
  if (!(d == want))
    throw ConfigError("world", "dataset dimensions (H=" + std::to_string(d.H) + ", T=" + std::to_string(d.T) +
                                   ", res=" + std::to_string(d.context_res) + ", n_future=" +
                                   std::to_string(d.n_future) + ") do not match the configuration");
}

// Model inputs for a set of chunks. Noise and flow times come from the
// caller; actions are normalized by a_max.
struct Batch {
  ModelInputs<double> inputs;
  Tensor<double> target;  // u_t = a - eps, [B*T x 2]
};

inline Batch assemble_batch(const std::vector<const TrajectoryChunk*>& chunks, const std::vector<double>& t,
                            const std::vector<double>& eps, const RunConfig& c) {
  const std::size_t B = chunks.size(), TA = std::size_t{c.world.T} * kActionDim;
  if (t.size() != B || eps.size() != B * TA) throw DimensionError("assemble_batch: noise sizes do not match batch");
  const DatasetDims dims = DatasetDims::from(c.world);
  Batch b;
  auto& in = b.inputs;
  in.batch = B;
  in.flow_time = t;
  std::vector<double> ctx, fut, state, a_t, u_t;
  ctx.reserve(B * dims.context_size());
  fut.reserve(B * dims.future_size());
  for (std::size_t i = 0; i < B; ++i) {
    const auto& ch = *chunks[i];
    for (float tok : ch.instruction) in.instruction.push_back(static_cast<std::size_t>(tok));
    ctx.insert(ctx.end(), ch.context_frames.begin(), ch.context_frames.end());
    fut.insert(fut.end(), ch.future_frames.begin(), ch.future_frames.end());
    state.insert(state.end(), ch.state.begin(), ch.state.end());
    std::vector<double> a(TA);
    for (std::size_t j = 0; j < TA; ++j) a[j] = static_cast<double>(ch.actions[j]) / c.world.a_max;
    const FlowSample s = make_flow_sample(a, t[i], std::vector<double>(eps.begin() + i * TA, eps.begin() + (i + 1) * TA));
    a_t.insert(a_t.end(), s.a_t.begin(), s.a_t.end());
    u_t.insert(u_t.end(), s.u_t.begin(), s.u_t.end());
  }
  const std::size_t cf = kChannels * c.world.context_res * c.world.context_res;
  const std::size_t ff = kChannels * c.world.future_res * c.world.future_res;
  in.context_frames = Tensor<double>::constant({B * c.world.H, cf}, std::move(ctx));
  in.future_frames = Tensor<double>::constant({B * c.world.n_future, ff}, std::move(fut));
  in.state = Tensor<double>::constant({B, kStateDim}, std::move(state));
  in.noised_actions = Tensor<double>::constant({B * c.world.T, kActionDim}, std::move(a_t));
  b.target = Tensor<double>::constant({B * c.world.T, kActionDim}, std::move(u_t));
  return b;
}

// Differentiable loss terms of one batch; terms absent under the current
// ablation or mode stay undefined.
struct LossTerms {
  Tensor<double> fm_prior, fm_post, align, norm, rank, total;
  LossComponents values() const {
    auto v = [](const Tensor<double>& t) { return t.defined() ? t.item() : 0.0; };
    return {v(fm_prior), v(fm_post), v(align), v(norm), v(rank), v(total)};
  }
};

// Gaussian N(0, 1/n) projection [d x n] for the spectral regularizer.
inline Tensor<double> random_projection(std::mt19937_64& rng, std::size_t d, std::size_t n) {
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> v(d * n);
  for (auto& x : v) x = g(rng);
  return Tensor<double>::constant({d, n}, std::move(v));
}

inline LossTerms compute_losses(const WorldActionModel<double>& model, const Batch& batch, const Tensor<double>& proj,
                                Ablation ablation, TrainMode mode) {
  const RunConfig& c = model.config();
  const auto out = model.forward(batch.inputs, training_layout(ablation));
  const auto& bb = out.backbone;
  LossTerms L;
  L.fm_prior = fm_loss(bb.velocity_prior, batch.target);
  if (bb.velocity_post.defined()) L.fm_post = fm_loss(bb.velocity_post, batch.target);
  if (!bb.taps.post.empty()) L.align = align_loss(bb.taps, c.loss.align_stop_posterior);
  if (mode == TrainMode::Pretrain && !bb.taps.prior.empty()) {
    std::vector<Tensor<double>> rows;
    rows.insert(rows.end(), bb.taps.prior.begin(), bb.taps.prior.end());
    rows.insert(rows.end(), bb.taps.post.begin(), bb.taps.post.end());
    L.norm = norm_reg(rows, c.tau());
    std::vector<Tensor<double>> ranks;
    for (const auto& h : rows) ranks.push_back(rank_reg(h, proj));
    L.rank = scale(add_scalars(ranks), 1.0 / static_cast<double>(ranks.size()));
  }
  LossWeights w{c.loss.w_align, c.loss.w_norm, c.loss.w_rank};
  L.total = total_loss(L.fm_prior, L.fm_post, L.align, L.norm, L.rank, w, mode);
  return L;
}

struct StepMetrics {
  std::uint64_t step = 0;
  std::optional<LossComponents> loss;  // absent on the closing validation record
  double grad_norm = 0.0;
  std::optional<double> val_fm_prior;
};

inline json to_json(const StepMetrics& m) {
  json j;
  j["step"] = m.step;
  const auto field = [&](double LossComponents::*f) { return m.loss ? json((*m.loss).*f) : json(nullptr); };
  j["fm_prior"] = field(&LossComponents::fm_prior);
  j["fm_post"] = field(&LossComponents::fm_post);
  j["align"] = field(&LossComponents::align);
  j["norm"] = field(&LossComponents::norm);
  j["rank"] = field(&LossComponents::rank);
  j["total"] = field(&LossComponents::total);
  j["grad_norm"] = m.loss ? json(m.grad_norm) : json(nullptr);
  j["val_fm_prior"] = m.val_fm_prior ? json(*m.val_fm_prior) : json(nullptr);
  return j;
}

namespace detail {

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

}  // namespace detail

// Single-activity optimization loop over an in-memory dataset.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, const Dataset& data)
      : Trainer(cfg, data, WorldActionModel<double>::initialize(cfg, cfg.train.seed)) {
    rng_.seed(detail::stream_seed(cfg.train.seed, 1));
    adam_ = init_adamw(model_.params());
  }

  static Trainer resume(const Checkpoint& ck, const Dataset& data) {
    Trainer t(ck.config, data, WorldActionModel<double>(ck.config, ck.params.clone()));
    if (!(ck.layout == make_layout(ck.config, training_layout(t.ablation_))))
      throw FormatError("checkpoint: stored layout does not match its configuration");
    t.adam_ = ck.adam;
    if (t.adam_.m.size() != init_adamw(t.model_.params()).m.size())
      throw FormatError("checkpoint: optimizer state does not match the parameters");
    t.step_ = ck.step;
    std::istringstream(ck.rng_state) >> t.rng_;
    return t;
  }

  const WorldActionModel<double>& model() const { return model_; }
  WorldActionModel<double>& model() { return model_; }
  const RunConfig& config() const { return cfg_; }
  std::uint64_t step_count() const { return step_; }
  std::size_t train_size() const { return train_idx_.size(); }
  std::size_t val_size() const { return val_idx_.size(); }

  Checkpoint checkpoint() const {
    Checkpoint ck;
    ck.config = cfg_;
    ck.layout = make_layout(cfg_, training_layout(ablation_));
    ck.params = model_.params().clone();
    ck.adam = adam_;
    ck.step = step_;
    std::ostringstream os;
    os << rng_;
    ck.rng_state = os.str();
    return ck;
  }

  // One optimizer update; the returned metrics describe the batch loss before
  // the update.
  StepMetrics step() {
    const std::size_t B = cfg_.train.batch, TA = std::size_t{cfg_.world.T} * kActionDim;
    std::uniform_int_distribution<std::size_t> pick(0, train_idx_.size() - 1);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<const TrajectoryChunk*> chunks(B);
    for (auto& p : chunks) p = &data_->chunks[train_idx_[pick(rng_)]];
    std::vector<double> t(B), eps(B * TA);
    for (auto& x : t) x = u01(rng_);
    for (auto& x : eps) x = g(rng_);
    const Tensor<double> proj = random_projection(rng_, cfg_.model.d, cfg_.n_proj());
    const Batch batch = assemble_batch(chunks, t, eps, cfg_);

    model_.params().zero_grad();
    Tape<double> tape;
    LossTerms L;
    {
      auto scope = tape.activate();
      L = compute_losses(model_, batch, proj, ablation_, mode_);
    }
    StepMetrics m;
    m.step = step_;
    m.loss = L.values();
    if (!std::isfinite(m.loss->total)) throw TrainingError("non-finite loss at step " + std::to_string(step_) + ": " + to_json(m).dump());
    tape.backward(L.total);
    m.grad_norm = adamw_step(model_.params(), adam_, optimizer_options());
    ++step_;
    return m;
  }

  // Prior-branch flow-matching loss on a fixed validation subset with fixed
  // noise, evaluated with the deployable layout.
  double validation_fm() const {
    const std::size_t n = val_idx_.size(), TA = std::size_t{cfg_.world.T} * kActionDim;
    if (n == 0) return 0.0;
    double sum = 0.0;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < n; start += chunk) {
      const std::size_t end = std::min(n, start + chunk);
      std::vector<const TrajectoryChunk*> cs;
      for (std::size_t i = start; i < end; ++i) cs.push_back(&data_->chunks[val_idx_[i]]);
      const Batch b = assemble_batch(cs, std::vector<double>(val_t_.begin() + start, val_t_.begin() + end),
                                     std::vector<double>(val_eps_.begin() + start * TA, val_eps_.begin() + end * TA),
                                     cfg_);
      const auto out = model_.forward(b.inputs, inference_layout(ablation_));
      sum += fm_loss(out.backbone.velocity_prior, b.target).item() * static_cast<double>(end - start);
    }
    return sum / static_cast<double>(n);
  }

  // Runs until `total_steps` updates have been made. The sink receives one
  // record per update; validation runs at step 0, every val_every steps and
  // after the last update.
  void run(std::uint64_t total_steps, const std::function<void(const StepMetrics&)>& sink,
           const std::function<void(const Trainer&)>& on_checkpoint = {}) {
    const std::uint64_t frozen = model_.params().checksum(true);
    const auto val_every = cfg_.train.val_every;
    while (step_ < total_steps) {
      const bool validate_now = val_every > 0 && step_ % val_every == 0;
      std::optional<double> val;
      if (validate_now) val = validation_fm();
      StepMetrics m = step();
      m.val_fm_prior = val;
      if (sink) sink(m);
      if (on_checkpoint && cfg_.train.ckpt_every > 0 && step_ % cfg_.train.ckpt_every == 0) on_checkpoint(*this);
    }
    if (sink) {
      StepMetrics last;
      last.step = step_;
      last.val_fm_prior = validation_fm();
      sink(last);
    }
    if (model_.params().checksum(true) != frozen)
      throw TrainingError("frozen future-encoder parameters changed during training");
  }

  AdamWOptions optimizer_options() const {
    const auto& t = cfg_.train;
    return {t.lr, t.beta1, t.beta2, t.adam_eps, t.weight_decay, t.grad_clip};
  }

 private:
  Trainer(const RunConfig& cfg, const Dataset& data, WorldActionModel<double> model)
      : cfg_(cfg), data_(&data), model_(std::move(model)), ablation_(parse_ablation(cfg.train.ablation)),
        mode_(parse_mode(cfg.train.mode)) {
    validate(cfg_);
    check_dataset_matches(data.dims, cfg_);
    if (data.chunks.size() < 2) throw ConfigError("data", "dataset needs at least two chunks");
    split();
  }

  // Seeded train/validation split and fixed validation noise.
  void split() {
    std::vector<std::size_t> idx(data_->chunks.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 srng(detail::stream_seed(cfg_.train.seed, 2));
    std::shuffle(idx.begin(), idx.end(), srng);
    std::size_t n_val = static_cast<std::size_t>(std::round(cfg_.train.val_fraction * static_cast<double>(idx.size())));
    n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
    val_idx_.assign(idx.begin(), idx.begin() + n_val);
    train_idx_.assign(idx.begin() + n_val, idx.end());
    if (cfg_.train.val_max_chunks > 0 && val_idx_.size() > cfg_.train.val_max_chunks)
      val_idx_.resize(cfg_.train.val_max_chunks);
    std::mt19937_64 vrng(detail::stream_seed(cfg_.train.seed, 3));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> g(0.0, 1.0);
    val_t_.resize(val_idx_.size());
    val_eps_.resize(val_idx_.size() * cfg_.world.T * kActionDim);
    for (auto& x : val_t_) x = u01(vrng);
    for (auto& x : val_eps_) x = g(vrng);
  }

  RunConfig cfg_;
  const Dataset* data_;
  WorldActionModel<double> model_;
  Ablation ablation_;
  TrainMode mode_;
  AdamWState adam_;
  std::mt19937_64 rng_;
  std::uint64_t step_ = 0;
  std::vector<std::size_t> train_idx_, val_idx_;
  std::vector<double> val_t_, val_eps_;
};

}  // namespace lwam
