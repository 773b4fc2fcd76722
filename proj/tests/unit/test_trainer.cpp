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

#include <algorithm>
#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "medpose/checkpoint.hpp"
#include "medpose/error.hpp"
#include "medpose/io.hpp"
#include "medpose/synth.hpp"
#include "medpose/trainer.hpp"
#include "support.hpp"

namespace medpose {
namespace {

Dataset synth_set(std::uint64_t seed, int count, int landmarks, int size, int patients = 0,
                  const std::string& name = "synth") {
  SynthOptions o;
  o.seed = seed;
  o.count = count;
  o.landmarks = landmarks;
  o.width = o.height = size;
  o.patients = patients;
  o.name = name;
  SynthDataset s = synth_generate(o);
  return {std::move(s.manifest), std::move(s.images)};
}

ModelConfig small_model(std::size_t input = 32) {
  ModelConfig c;
  c.input_height = c.input_width = input;
  c.patch_size = 8;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  c.deconv_stages = 2;
  c.deconv_channels = 8;
  c.dataset_heads = {{"synth", 3}};
  return c;
}

TrainConfig small_run(std::size_t steps) {
  TrainConfig t;
  t.model = small_model();
  t.batch_size = 2;
  t.steps = steps;
  t.steps_per_epoch = 3;
  t.seed = 7;
  t.train.push_back(synth_set(1, 4, 3, 64));
  return t;
}

DatasetManifest sized(std::size_t n, const std::string& name) {
  DatasetManifest m;
  m.name = name;
  m.landmark_count = 1;
  m.images.resize(n);
  return m;
}

TEST(Schedule, MixProportionalToSize) {
  BatchSchedule s = multi_dataset_schedule({sized(300, "a"), sized(100, "b")}, 8, 1);
  std::size_t first = 0;
  for (int i = 0; i < 10000; ++i) {
    const Batch b = s.next();
    first += b.dataset == 0 ? 1 : 0;
    const std::size_t limit = b.dataset == 0 ? 300 : 100;
    ASSERT_EQ(b.indices.size(), 8u);
    std::set<std::size_t> seen(b.indices.begin(), b.indices.end());
    ASSERT_EQ(seen.size(), 8u);
    ASSERT_LT(*seen.rbegin(), limit);
  }
  EXPECT_NEAR(first / 10000.0, 0.75, 0.05);
}

TEST(Schedule, EpochIsPermutation) {
  BatchSchedule s({10}, 5, 3);
  for (int epoch = 0; epoch < 20; ++epoch) {
    std::vector<std::size_t> all;
    for (int k = 0; k < 2; ++k) {
      const Batch b = s.next();
      EXPECT_EQ(b.dataset, 0u);
      all.insert(all.end(), b.indices.begin(), b.indices.end());
    }
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  }
}

TEST(Schedule, SmallDatasetClampsBatchAndSeedRepeats) {
  BatchSchedule a({3}, 8, 4), b({3}, 8, 4);
  for (int i = 0; i < 10; ++i) {
    const Batch x = a.next();
    EXPECT_EQ(x.indices.size(), 3u);
    EXPECT_EQ(x.indices, b.next().indices);
  }
}

TEST(FewShot, TwentyTwoPatients) {
  const Dataset d = synth_set(2, 44, 2, 64, 22);
  const auto [train, test] = few_shot_split(d.manifest, 3, 11);
  std::set<std::string> tp, sp;
  for (const auto& e : train.images) tp.insert(e.patient_id);
  for (const auto& e : test.images) sp.insert(e.patient_id);
  EXPECT_EQ(tp.size(), 3u);
  EXPECT_EQ(sp.size(), 19u);
  for (const auto& p : tp) EXPECT_FALSE(sp.count(p));
  EXPECT_EQ(train.images.size() + test.images.size(), 44u);
  EXPECT_EQ(train.name, d.manifest.name);
  EXPECT_EQ(train.sdr_thresholds, d.manifest.sdr_thresholds);

  const auto again = few_shot_split(d.manifest, 3, 11);
  EXPECT_EQ(manifest_to_json(again.first), manifest_to_json(train));
  bool differs = false;
  for (std::uint64_t seed = 12; seed < 20 && !differs; ++seed) {
    differs = manifest_to_json(few_shot_split(d.manifest, 3, seed).first) != manifest_to_json(train);
  }
  EXPECT_TRUE(differs);
}

TEST(FewShot, Limits) {
  const Dataset d = synth_set(3, 5, 2, 64, 5);
  EXPECT_EQ(few_shot_split(d.manifest, 4, 1).second.images.size(), 1u);
  EXPECT_THROW(few_shot_split(d.manifest, 5, 1), Error);
  EXPECT_THROW(few_shot_split(d.manifest, 0, 1), Error);
}

TEST(History, CsvRoundTrip) {
  TrainHistory h;
  h.step_loss = {0.5, 0.25, 0.125};
  h.epochs = {{1, "train", 3.5}, {1, "val", 4.25}, {2, "train", 1.0}};
  const std::string csv = history_to_csv(h);
  EXPECT_EQ(csv.substr(0, 10), "step,loss\n");
  EXPECT_NE(csv.find("\n\nepoch,split,mre\n1,train,3.5\n"), std::string::npos);
  const TrainHistory back = history_from_csv(csv);
  EXPECT_EQ(back.step_loss, h.step_loss);
  EXPECT_EQ(back.epochs, h.epochs);
}

TEST(History, Malformed) {
  for (const char* text : {"", "1,2\n", "step,loss\n2,0.1\n", "epoch,split,mre\n1,train\n", "step,loss\n1,abc\n"}) {
    try {
      history_from_csv(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kParse) << text;
    }
  }
}

// A predictor that returns the ground-truth heatmaps (optionally translated
// in original pixels) for whichever dataset image it is shown.
HeatmapPredictor oracle(const Dataset& d, const ModelConfig& cfg, double shift_px) {
  std::vector<Tensor> inputs;
  std::vector<HeatmapStack> outputs;
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    std::vector<Point2> pts = d.manifest.images[i].landmarks.points();
    for (auto& p : pts) p.x += shift_px;
    PreparedSample s = prepare_sample(cfg, d.images[i], LandmarkSet(pts), GaussianSpec{});
    inputs.push_back(std::move(s.image));
    outputs.push_back(std::move(s.targets.heatmaps));
  }
  return [inputs, outputs](const Tensor& x) {
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i] == x) return outputs[i];
    }
    throw std::runtime_error("oracle saw an unknown image");
  };
}

// Landmarks on multiples of 4 px decode exactly at strides 1, 2 and 4.
Dataset grid_aligned(int count) {
  Dataset d = synth_set(4, count, 3, 64);
  for (std::size_t i = 0; i < d.manifest.images.size(); ++i) {
    std::vector<Point2> pts;
    for (std::size_t k = 0; k < 3; ++k) pts.push_back({8.0 + 4.0 * ((i + 3 * k) % 10), 12.0 + 8.0 * k});
    d.manifest.images[i].landmarks = LandmarkSet(pts);
  }
  return d;
}

TEST(Evaluate, OracleHeatmapsGivePerfectScores) {
  const Dataset d = grid_aligned(5);
  ModelConfig cfg = small_model(64);
  const MetricsReport r = evaluate(oracle(d, cfg, 0.0), cfg, d, d.manifest.sdr_thresholds);
  EXPECT_EQ(r.n_images, 5u);
  EXPECT_EQ(r.n_landmarks, 15u);
  EXPECT_LT(r.mre.mean, 1e-9);
  for (const auto& s : r.sdr) EXPECT_EQ(s.value, 100.0);
  EXPECT_EQ(r.sdr_avg, 100.0);
}

TEST(Evaluate, ErrorsMeasuredInOriginalScale) {
  const Dataset d = grid_aligned(4);
  for (std::size_t input : {32u, 64u, 128u}) {
    ModelConfig cfg = small_model(input);
    const MetricsReport r = evaluate(oracle(d, cfg, 4.0), cfg, d, d.manifest.sdr_thresholds);
    EXPECT_NEAR(r.mre.mean, 4.0, 1e-9) << input;
    EXPECT_NEAR(r.mre.std, 0.0, 1e-9) << input;
    EXPECT_EQ(r.unit, Unit::kMm);
  }
}

TEST(Evaluate, UntrainedModelGivesWellFormedReport) {
  const Dataset d = synth_set(5, 3, 3, 64);
  const FloatModel m = build_model<float>(small_model(), 1);
  const MetricsReport r = evaluate(m, d);
  EXPECT_TRUE(std::isfinite(r.mre.mean));
  EXPECT_EQ(r.sdr.size(), d.manifest.sdr_thresholds.size());
  EXPECT_THROW(evaluate(m, d, std::string("other")), Error);
}

TEST(Train, ZeroStepsReturnsInitialModel) {
  testing::TempDir dir("train");
  TrainConfig t = small_run(0);
  t.output_dir = dir.path();
  const TrainResult r = train(t);
  EXPECT_EQ(r.model.params, build_model<float>(t.model, t.seed).params);
  EXPECT_TRUE(r.history.step_loss.empty());
  EXPECT_TRUE(r.history.epochs.empty());
  EXPECT_FALSE(r.best_epoch.has_value());
  EXPECT_TRUE(std::filesystem::exists(dir / "best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "last.ckpt"));
}

TEST(Train, HistoryAndEpochCadence) {
  testing::TempDir dir("train");
  TrainConfig t = small_run(7);
  t.val.push_back(synth_set(9, 2, 3, 64));
  t.output_dir = dir.path();
  const TrainResult r = train(t);
  EXPECT_EQ(r.history.step_loss.size(), 7u);
  // Epoch ends after steps 3 and 6, plus the final partial epoch.
  ASSERT_EQ(r.history.epochs.size(), 6u);
  EXPECT_EQ(r.history.epochs[0], (EpochRecord{1, "train", r.history.epochs[0].mre}));
  EXPECT_EQ(r.history.epochs[5].epoch, 3u);
  EXPECT_EQ(r.history.epochs[5].split, "val");
  const TrainHistory disk = history_from_csv(read_text_file(dir / "history.csv"));
  EXPECT_EQ(disk.epochs.size(), 6u);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_FLOAT_EQ(disk.step_loss[i], r.history.step_loss[i]);
  ASSERT_TRUE(r.best_epoch.has_value());
  double best = 1e300;
  std::size_t at = 0;
  for (const auto& e : r.history.epochs) {
    if (e.split == "val" && e.mre < best) best = e.mre, at = e.epoch;
  }
  EXPECT_EQ(*r.best_epoch, at);
  EXPECT_EQ(load_checkpoint(dir / "best.ckpt").model.params, r.best.params);
  EXPECT_EQ(load_checkpoint(dir / "last.ckpt").model.params, r.model.params);
}

TEST(Train, SameSeedBitIdenticalCheckpoints) {
  testing::TempDir a("train"), b("train");
  TrainConfig t = small_run(4);
  t.output_dir = a.path();
  train(t);
  t.output_dir = b.path();
  train(t);
  EXPECT_EQ(read_text_file(a / "best.ckpt"), read_text_file(b / "best.ckpt"));
  EXPECT_EQ(read_text_file(a / "last.ckpt"), read_text_file(b / "last.ckpt"));
  EXPECT_EQ(read_text_file(a / "history.csv"), read_text_file(b / "history.csv"));
}

TEST(Train, DifferentSeedDiffers) {
  TrainConfig t = small_run(2);
  const TrainResult x = train(t);
  t.seed = 8;
  EXPECT_NE(train(t).model.params, x.model.params);
}

TEST(Train, LoraOnlyFreezesBackbone) {
  TrainConfig t = small_run(5);
  t.lora = LoraConfig{};
  t.trainable = TrainMode::kLoraOnly;
  const TrainResult r = train(t);
  FloatModel init = build_model<float>(t.model, t.seed);
  lora_inject(init, *t.lora, t.seed);
  std::size_t changed = 0;
  for (const auto& [n, p] : init.params) {
    const bool same = r.model.param(n) == p;
    if (!r.model.is_trainable(n)) EXPECT_TRUE(same) << n;
    changed += same ? 0 : 1;
  }
  EXPECT_GT(changed, 0u);
}

TEST(Train, BaseCheckpointGetsNewHeadAndAdapters) {
  testing::TempDir dir("train");
  TrainConfig g = small_run(2);
  g.output_dir = dir / "gen";
  std::filesystem::create_directories(g.output_dir);
  train(g);
  const FloatModel base = load_checkpoint(dir / "gen" / "last.ckpt").model;

  TrainConfig s = small_run(3);
  s.model = small_model();
  s.train = {synth_set(6, 4, 2, 64, 0, "novel")};
  s.base_checkpoint = dir / "gen" / "last.ckpt";
  s.lora = LoraConfig{};
  s.trainable = TrainMode::kLoraOnly;
  const TrainResult r = train(s);
  EXPECT_TRUE(r.model.config.find_head("novel"));
  EXPECT_TRUE(r.model.config.find_head("synth"));
  for (const auto& [n, p] : base.params) {
    if (n.starts_with("head.")) continue;
    EXPECT_EQ(r.model.param(n), p) << n;
  }
  EXPECT_EQ(r.model.param("head.out.synth.weight"), base.param("head.out.synth.weight"));
}

TEST(Train, HeadMismatchRejected) {
  TrainConfig t = small_run(1);
  t.train = {synth_set(1, 2, 2, 64)};
  EXPECT_THROW(train(t), Error);
}

}  // namespace
}  // namespace medpose
