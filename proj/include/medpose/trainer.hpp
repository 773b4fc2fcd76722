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

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "medpose/augment.hpp"
#include "medpose/heatmap.hpp"
#include "medpose/image.hpp"
#include "medpose/manifest.hpp"
#include "medpose/metrics.hpp"
#include "medpose/model.hpp"
#include "medpose/optim.hpp"

namespace medpose {

/// A manifest with its images decoded in memory.
struct Dataset {
  DatasetManifest manifest;
  std::vector<GrayImage> images;
};

/// Reads every image of the manifest and checks its size against the entry.
Dataset load_dataset(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Sampling

struct Batch {
  std::size_t dataset = 0;
  std::vector<std::size_t> indices;
};

/// Each batch comes from a single dataset, chosen with probability
/// proportional to its image count. Within a dataset, images are drawn from a
/// shuffled permutation without replacement; when fewer than a batch remain
/// the permutation is redrawn.
class BatchSchedule {
 public:
  BatchSchedule(std::vector<std::size_t> dataset_sizes, std::size_t batch_size, std::uint64_t seed);

  Batch next();

 private:
  std::vector<std::size_t> sizes_;
  std::size_t batch_size_;
  std::mt19937_64 rng_;
  std::discrete_distribution<std::size_t> pick_;
  std::vector<std::vector<std::size_t>> order_;
  std::vector<std::size_t> cursor_;
};

BatchSchedule multi_dataset_schedule(const std::vector<DatasetManifest>& manifests,
                                     std::size_t batch_size, std::uint64_t seed);

/// Patient-disjoint split: k whole patients to train, the rest to test.
std::pair<DatasetManifest, DatasetManifest> few_shot_split(const DatasetManifest& manifest,
                                                           std::size_t k_patients,
                                                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Preprocessing and evaluation

/// Gray image -> (C, H, W) tensor, replicating the channel when C > 1.
Tensor image_tensor(const GrayImage& img, std::size_t channels);

struct PreparedSample {
  Tensor image;
  EncodedTargets targets;
};

/// Resizes the full image onto the model input and encodes target heatmaps.
PreparedSample prepare_sample(const ModelConfig& cfg, const GrayImage& img,
                              const LandmarkSet& landmarks, const GaussianSpec& gaussian);

/// Heatmaps for a model-input image tensor.
using HeatmapPredictor = std::function<HeatmapStack(const Tensor& input)>;

HeatmapPredictor model_predictor(const FloatModel& model, const std::string& head);

/// Decoded landmarks mapped back to original-image coordinates.
DecodedLandmarks predict_landmarks(const HeatmapPredictor& predictor, const ModelConfig& cfg,
                                   const GrayImage& img, const ImageSpec& spec);

/// Radial errors over the whole dataset, measured in original image space.
RadialErrors dataset_errors(const HeatmapPredictor& predictor, const ModelConfig& cfg,
                            const Dataset& data);

MetricsReport evaluate(const HeatmapPredictor& predictor, const ModelConfig& cfg, const Dataset& data,
                       std::span<const double> thresholds);

/// Uses the head named after the manifest, or `head` when given.
MetricsReport evaluate(const FloatModel& model, const Dataset& data,
                       std::optional<std::string> head = std::nullopt,
                       std::optional<std::vector<double>> thresholds = std::nullopt);

// ---------------------------------------------------------------------------
// Training

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;
  double mre = 0.0;
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<double> step_loss;
  std::vector<EpochRecord> epochs;
};

/// Two CSV blocks separated by a blank line: "step,loss" rows, then
/// "epoch,split,mre" rows.
std::string history_to_csv(const TrainHistory& h);
TrainHistory history_from_csv(const std::string& text);

struct TrainConfig {
  ModelConfig model;
  std::optional<LoraConfig> lora;
  TrainMode trainable = TrainMode::kFull;
  AugmentConfig augment;
  AdamWConfig optimizer;
  GaussianSpec gaussian;
  std::size_t batch_size = 8;
  std::size_t steps = 0;            // total optimizer steps
  std::size_t steps_per_epoch = 0;  // 0: ceil(total train images / batch)
  std::uint64_t seed = 0;
  std::vector<Dataset> train;
  std::vector<Dataset> val;
  /// Starting point instead of a fresh model; missing heads are added.
  std::optional<std::filesystem::path> base_checkpoint;
  /// best.ckpt, last.ckpt and history.csv go here when non-empty.
  std::filesystem::path output_dir;
};

struct TrainResult {
  FloatModel model;  // after the last step
  FloatModel best;   // lowest selection MRE (validation if present, else train)
  TrainHistory history;
  std::optional<std::size_t> best_epoch;
};

/// Deterministic for a fixed seed: every sample draws its augmentation from
/// a stream keyed by (seed, step, position in batch).
TrainResult train(const TrainConfig& cfg);

}  // namespace medpose
