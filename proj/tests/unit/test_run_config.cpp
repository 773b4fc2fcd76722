// Copyright 2026 The medpose Authors. All Rights Reserved.
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

#include <filesystem>

#include <gtest/gtest.h>

#include "medpose/error.hpp"
#include "medpose/io.hpp"
#include "medpose/run_config.hpp"
#include "support.hpp"

namespace medpose {
namespace {

using nlohmann::json;

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an error";
  return Error(ErrorKind::kIo, "none");
}

class RunConfigFiles : public ::testing::Test {
 protected:
  void SetUp() override {
    write_file_atomic(dir_ / "a.json", "{}");
    write_file_atomic(dir_ / "b.json", "{}");
    write_file_atomic(dir_ / "base.ckpt", "x");
  }
  std::filesystem::path write(const json& doc) {
    const auto p = dir_ / "run.json";
    write_file_atomic(p, doc.dump());
    return p;
  }
  testing::TempDir dir_{"runcfg"};
};

TEST(Override, DottedKeysAndValueTypes) {
  json doc = {{"optimizer", {{"base_lr", 1.0}}}};
  apply_override(doc, "optimizer.base_lr=2e-4");
  apply_override(doc, "optimizer.steps=10");
  apply_override(doc, "mode=few_shot");
  apply_override(doc, "lora.target_sites=[\"qkv\"]");
  apply_override(doc, "output_dir=\"x=y\"");
  EXPECT_EQ(doc["optimizer"]["base_lr"], 2e-4);
  EXPECT_EQ(doc["optimizer"]["steps"], 10);
  EXPECT_EQ(doc["mode"], "few_shot");
  EXPECT_EQ(doc["lora"]["target_sites"], json::array({"qkv"}));
  EXPECT_EQ(doc["output_dir"], "x=y");
}

TEST(Override, Malformed) {
  json doc = {{"seed", 1}};
  EXPECT_EQ(error_of([&] { apply_override(doc, "seed"); }).kind(), ErrorKind::kConfig);
  EXPECT_EQ(error_of([&] { apply_override(doc, "a..b=1"); }).kind(), ErrorKind::kConfig);
  EXPECT_EQ(error_of([&] { apply_override(doc, "seed.x=1"); }).kind(), ErrorKind::kConfig);
}

TEST_F(RunConfigFiles, DefaultsAndRelativePaths) {
  const RunConfig c = load_run_config(write({{"datasets", {"a.json"}}}));
  EXPECT_EQ(c.mode, RunMode::kGeneralist);
  EXPECT_EQ(c.datasets.at(0), dir_ / "a.json");
  EXPECT_EQ(c.output_dir, dir_ / "run");
  EXPECT_FALSE(c.model_given);
  EXPECT_EQ(c.optimizer.base_lr, 5e-4);
  EXPECT_EQ(c.optimizer.layer_decay, 0.85);
  EXPECT_EQ(c.batch_size, 8u);
  EXPECT_EQ(c.heatmap.sigma, 2.0);
  EXPECT_FALSE(c.steps.has_value());
}

TEST_F(RunConfigFiles, FullDocumentAndOverrides) {
  const json doc = {{"mode", "specialist"},
                    {"seed", 3},
                    {"datasets", {"a.json"}},
                    {"val_datasets", {"b.json"}},
                    {"base_checkpoint", "base.ckpt"},
                    {"lora", {{"rank", 2}, {"alpha", 4.0}}},
                    {"trainable", "lora_only"},
                    {"augment", {{"flip_prob", 0.0}, {"coarse_dropout", {{"hole_size", {0.1, 0.2}}}}}},
                    {"optimizer", {{"steps", 5}, {"betas", {0.8, 0.9}}, {"batch_size", 2}}},
                    {"few_shot", {{"k_patients", 4}}}};
  const RunConfig c = load_run_config(write(doc), {"optimizer.base_lr=1e-3", "seed=9"});
  EXPECT_EQ(c.mode, RunMode::kSpecialist);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(*c.base_checkpoint, dir_ / "base.ckpt");
  EXPECT_EQ(c.lora->rank, 2u);
  EXPECT_EQ(*c.trainable, TrainMode::kLoraOnly);
  EXPECT_EQ(c.augment.flip_prob, 0.0);
  EXPECT_EQ(c.augment.coarse_dropout.max_fraction, 0.2);
  EXPECT_EQ(*c.steps, 5u);
  EXPECT_EQ(c.optimizer.beta1, 0.8);
  EXPECT_EQ(c.optimizer.base_lr, 1e-3);
  EXPECT_EQ(c.batch_size, 2u);
  EXPECT_EQ(c.few_shot_patients, 4u);

  const RunConfig again = parse_run_config(run_config_to_json(c), dir_.path());
  EXPECT_EQ(run_config_to_json(again), run_config_to_json(c));
}

TEST_F(RunConfigFiles, MissingPathNamesIt) {
  const Error e = error_of([&] { load_run_config(write({{"datasets", {"a.json", "missing.json"}}})); });
  EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  EXPECT_EQ(e.subject(), (dir_ / "missing.json").string());
}

TEST_F(RunConfigFiles, ModeInvariants) {
  EXPECT_EQ(error_of([&] { load_run_config(write({{"mode", "few_shot"}, {"datasets", {"a.json", "b.json"}}})); })
                .kind(),
            ErrorKind::kConfig);
  EXPECT_EQ(error_of([&] { load_run_config(write({{"mode", "specialist"}, {"datasets", {"a.json"}}})); }).subject(),
            "base_checkpoint");
  EXPECT_EQ(error_of([&] { load_run_config(write(json::object())); }).subject(), "datasets");
  EXPECT_EQ(error_of([&] {
              load_run_config(write({{"datasets", {"a.json"}}, {"optimizer", {{"steps", 1}, {"epochs", 1}}}}));
            }).kind(),
            ErrorKind::kConfig);
  EXPECT_EQ(error_of([&] { load_run_config(write({{"mode", "zero_shot"}, {"datasets", {"a.json"}}})); }).kind(),
            ErrorKind::kConfig);
}

TEST_F(RunConfigFiles, UnknownKeysRejected) {
  EXPECT_EQ(error_of([&] { load_run_config(write({{"datasets", {"a.json"}}, {"warmup", 5}})); }).kind(),
            ErrorKind::kConfig);
  EXPECT_EQ(error_of([&] {
              load_run_config(write({{"datasets", {"a.json"}}, {"optimizer", {{"momentum", 0.9}}}}));
            }).kind(),
            ErrorKind::kConfig);
}

TEST_F(RunConfigFiles, MalformedJsonIsParseError) {
  write_file_atomic(dir_ / "bad.json", "{\"datasets\": [");
  EXPECT_EQ(error_of([&] { load_run_config(dir_ / "bad.json"); }).kind(), ErrorKind::kParse);
}

TEST_F(RunConfigFiles, ModelSectionMarksGiven) {
  const RunConfig c = load_run_config(
      write({{"datasets", {"a.json"}}, {"model", {{"input_size", {32, 48}}, {"embed_dim", 16}, {"heads", 2}}}}));
  EXPECT_TRUE(c.model_given);
  EXPECT_EQ(c.model.input_width, 48u);
  EXPECT_EQ(c.model.embed_dim, 16u);
}

}  // namespace
}  // namespace medpose
