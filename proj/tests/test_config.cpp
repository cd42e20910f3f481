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


#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lwam/checkpoint.hpp"
#include "lwam/config.hpp"

namespace lwam {
namespace {

namespace fs = std::filesystem;

std::string config_error_path(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

TEST(Config, RoundTripsThroughJson) {
  RunConfig c;
  c.world.H = 3;
  c.model.d = 96;
  c.model.n_heads = 6;
  c.loss.tau = 2.5;
  c.train.ablation = "no_latent";
  c.sampler.dtype = "f32";
  c.uac.safety = 2.25;
  EXPECT_EQ(config_from_json(to_json(c)), c);
  EXPECT_EQ(config_from_json(json::parse(to_json(c).dump())), c);
  EXPECT_EQ(config_from_json(json::object()), RunConfig{});
}

TEST(Config, ErrorsNameTheKeyPath) {
  EXPECT_EQ(config_error_path({{"model", {{"dd", 3}}}}), "model.dd");
  EXPECT_EQ(config_error_path({{"modle", json::object()}}), "modle");
  EXPECT_EQ(config_error_path({{"train", {{"lr", "fast"}}}}), "train.lr");
  EXPECT_EQ(config_error_path({{"world", {{"T", -1}}}}), "world.T");
  EXPECT_EQ(config_error_path({{"model", {{"d", 30}, {"n_heads", 4}}}}), "model.n_heads");
  EXPECT_EQ(config_error_path({{"model", {{"patch", 5}}}}), "model.patch");
  EXPECT_EQ(config_error_path({{"train", {{"ablation", "triple"}}}}), "train.ablation");
  EXPECT_EQ(config_error_path({{"sampler", {{"n_steps", 0}}}}), "sampler.n_steps");
  EXPECT_EQ(config_error_path({{"loss", {{"tau", 0.0}}}}), "loss.tau");
  EXPECT_EQ(config_error_path(json::array()), "config");
}

TEST(Config, ShippedDeskConfigIsTheDefault) {
  EXPECT_EQ(load_config(std::string(LWAM_CONFIG_DIR) + "/desk.json"), RunConfig{});
}

TEST(Config, ShippedPaperConfigCarriesFullScaleValues) {
  const RunConfig c = load_config(std::string(LWAM_CONFIG_DIR) + "/paper.json");
  EXPECT_EQ(c.world.H, 4u);
  EXPECT_EQ(c.world.T, 20u);
  EXPECT_EQ(c.model.K, 16u);
  EXPECT_EQ(c.model.align_last_L, 9u);
  EXPECT_EQ(c.loss.w_align, 1e-3);
  EXPECT_EQ(c.loss.w_norm, 1e-4);
  EXPECT_EQ(c.loss.w_rank, 1e-4);
  EXPECT_EQ(c.world.context_res, 224u);
  EXPECT_EQ(c.world.future_res, 256u);
}

// Command-line behaviour, driven through the built binary.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("lwam_cli_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) const {
    const std::string cmd = std::string(LWAM_CLI) + " " + args + " >" + (dir_ / "stdout").string() + " 2>" +
                            (dir_ / "stderr").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  std::string slurp(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
};

TEST_F(Cli, UnknownSubcommandOrFlagIsUsageError) {
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("sim-uac --no-such-flag"), 1);
  EXPECT_EQ(run(""), 1);
}

TEST_F(Cli, VersionReportsFormats) {
  EXPECT_EQ(run("--version"), 0);
  EXPECT_NE(slurp(dir_ / "stdout").find("checkpoint format v1"), std::string::npos);
}

TEST_F(Cli, InvalidConfigIsValidationError) {
  std::ofstream(dir_ / "bad.json") << R"({"model": {"d": 30}})";
  EXPECT_EQ(run("sim-uac --steps 10 --config " + (dir_ / "bad.json").string()), 1);
  EXPECT_NE(slurp(dir_ / "stderr").find("model.n_heads"), std::string::npos);
}

TEST_F(Cli, GenDataIsDeterministic) {
  const auto a = dir_ / "a.bin";
  ASSERT_EQ(run("gen-data --seed 1 --episodes 4 --out " + a.string()), 0);
  ASSERT_EQ(run("gen-data --seed 1 --episodes 4"), 0);  // to stdout
  const std::string file = slurp(a), piped = slurp(dir_ / "stdout");
  EXPECT_FALSE(file.empty());
  EXPECT_TRUE(file == piped);
  ASSERT_EQ(run("gen-data --seed 2 --episodes 4"), 0);
  EXPECT_FALSE(file == slurp(dir_ / "stdout"));
}

TEST_F(Cli, TrainWithZeroStepsWritesInitialCheckpoint) {
  const auto out = dir_ / "run";
  ASSERT_EQ(run("train --config " + std::string(LWAM_CONFIG_DIR) + "/desk.json --steps 0 --out-dir " + out.string()), 0);
  const Checkpoint ck = load_checkpoint((out / "final.lwck").string());
  EXPECT_EQ(ck.step, 0u);
  RunConfig expected;
  expected.train.steps = 0;  // the flag lands in the stored config
  EXPECT_TRUE(ck.config == expected);
  std::ifstream metrics(out / "metrics.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(metrics, line));
  EXPECT_TRUE(json::parse(line)["val_fm_prior"].is_number());
}

TEST_F(Cli, MaskcheckPasses) { EXPECT_EQ(run("maskcheck --seeds 100"), 0); }

TEST_F(Cli, SimUacWritesReport) {
  const auto rep = dir_ / "r.json";
  ASSERT_EQ(run("sim-uac --latency-median-ms 80 --latency-sigma 0.4 --steps 500 --seed 3 --report " + rep.string()), 0);
  const json j = json::parse(slurp(rep));
  EXPECT_EQ(j["prefix_violation_count"], 0);
  EXPECT_EQ(j["action_trace"].size(), 500u);
  ASSERT_EQ(run("sim-uac --latency-median-ms 80 --latency-sigma 0.4 --steps 500 --seed 3 --report " +
                (dir_ / "r2.json").string()),
            0);
  EXPECT_EQ(slurp(rep), slurp(dir_ / "r2.json"));
}

}  // namespace
}  // namespace lwam
