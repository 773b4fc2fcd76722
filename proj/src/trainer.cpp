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

#include "medpose/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "medpose/checkpoint.hpp"
#include "medpose/error.hpp"
#include "medpose/io.hpp"
#include "medpose/parallel.hpp"
#include "medpose/rng.hpp"

namespace medpose {

Dataset load_dataset(const DatasetManifest& manifest) {
  Dataset d{manifest, std::vector<GrayImage>(manifest.images.size())};
  parallel_for(manifest.images.size(), [&](std::size_t i) {
    d.images[i] = read_png(manifest.image_path(i));
    const ImageSpec& spec = manifest.images[i].image;
    if (d.images[i].width != spec.width || d.images[i].height != spec.height) {
      fail(ErrorKind::kValidation,
           fmt::format("image {} is {}x{} but the manifest says {}x{}", spec.path, d.images[i].width,
                       d.images[i].height, spec.width, spec.height),
           spec.path);
    }
  });
  return d;
}

// ---------------------------------------------------------------------------

BatchSchedule::BatchSchedule(std::vector<std::size_t> dataset_sizes, std::size_t batch_size,
                             std::uint64_t seed)
    : sizes_(std::move(dataset_sizes)), batch_size_(batch_size), rng_(seed) {
  if (sizes_.empty()) fail(ErrorKind::kConfig, "schedule needs at least one dataset");
  if (batch_size_ < 1) fail(ErrorKind::kConfig, "batch size must be at least 1");
  for (std::size_t s : sizes_) {
    if (s == 0) fail(ErrorKind::kConfig, "schedule dataset is empty");
  }
  pick_ = std::discrete_distribution<std::size_t>(sizes_.begin(), sizes_.end());
  order_.resize(sizes_.size());
  cursor_.assign(sizes_.size(), 0);
  for (std::size_t d = 0; d < sizes_.size(); ++d) {
    order_[d].resize(sizes_[d]);
    cursor_[d] = sizes_[d];  // forces a shuffle on first use
  }
}

Batch BatchSchedule::next() {
  Batch b;
  b.dataset = sizes_.size() == 1 ? 0 : pick_(rng_);
  auto& order = order_[b.dataset];
  std::size_t& cur = cursor_[b.dataset];
  const std::size_t take = std::min(batch_size_, order.size());
  if (order.size() - cur < take) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng_);
    cur = 0;
  }
  b.indices.assign(order.begin() + static_cast<std::ptrdiff_t>(cur),
                   order.begin() + static_cast<std::ptrdiff_t>(cur + take));
  cur += take;
  return b;
}

BatchSchedule multi_dataset_schedule(const std::vector<DatasetManifest>& manifests,
                                     std::size_t batch_size, std::uint64_t seed) {
  std::vector<std::size_t> sizes;
  for (const auto& m : manifests) sizes.push_back(m.images.size());
  return BatchSchedule(std::move(sizes), batch_size, seed);
}

std::pair<DatasetManifest, DatasetManifest> few_shot_split(const DatasetManifest& manifest,
                                                           std::size_t k_patients,
                                                           std::uint64_t seed) {
  std::vector<std::string> patients;
  std::set<std::string> seen;
  for (const auto& e : manifest.images) {
    if (seen.insert(e.patient_id).second) patients.push_back(e.patient_id);
  }
  if (k_patients < 1 || patients.size() < k_patients + 1) {
    fail(ErrorKind::kValidation,
         fmt::format("few-shot split of {} training patients needs at least {} distinct patients, "
                     "manifest '{}' has {}",
                     k_patients, k_patients + 1, manifest.name, patients.size()));
  }
  std::sort(patients.begin(), patients.end());
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  const std::set<std::string> chosen(patients.begin(), patients.begin() + static_cast<std::ptrdiff_t>(k_patients));

  DatasetManifest train = manifest;
  DatasetManifest test = manifest;
  train.images.clear();
  test.images.clear();
  for (const auto& e : manifest.images) (chosen.count(e.patient_id) ? train : test).images.push_back(e);
  return {std::move(train), std::move(test)};
}

// ---------------------------------------------------------------------------

Tensor image_tensor(const GrayImage& img, std::size_t channels) {
  const std::size_t plane = img.pixels.size();
  Tensor t({channels, static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)});
  for (std::size_t c = 0; c < channels; ++c) std::copy(img.pixels.begin(), img.pixels.end(), t.data() + c * plane);
  return t;
}

namespace {

GrayImage to_input(const ModelConfig& cfg, const GrayImage& img) {
  const int w = static_cast<int>(cfg.input_width);
  const int h = static_cast<int>(cfg.input_height);
  if (img.width == w && img.height == h) return img;
  return resize_bilinear(img, w, h);
}

ImageSpec spec_of(const GrayImage& img) {
  ImageSpec s;
  s.width = img.width;
  s.height = img.height;
  return s;
}

}  // namespace

PreparedSample prepare_sample(const ModelConfig& cfg, const GrayImage& img,
                              const LandmarkSet& landmarks, const GaussianSpec& gaussian) {
  const AffineTransform t = full_image_transform(spec_of(img), static_cast<int>(cfg.input_height),
                                                 static_cast<int>(cfg.input_width));
  const LandmarkSet mapped = apply_transform(t, landmarks);
  return {image_tensor(to_input(cfg, img), cfg.in_channels),
          encode(mapped, gaussian, cfg.heatmap_height(), cfg.heatmap_width(), cfg.heatmap_stride())};
}

HeatmapPredictor model_predictor(const FloatModel& model, const std::string& head) {
  if (!model.config.find_head(head)) {
    fail(ErrorKind::kValidation, "model has no head for dataset '" + head + "'", head);
  }
  return [&model, head](const Tensor& input) {
    return HeatmapStack{forward(model, input, head), model.config.heatmap_stride()};
  };
}

DecodedLandmarks predict_landmarks(const HeatmapPredictor& predictor, const ModelConfig& cfg,
                                   const GrayImage& img, const ImageSpec& spec) {
  ImageSpec s = spec;
  s.width = img.width;
  s.height = img.height;
  const AffineTransform t = full_image_transform(s, static_cast<int>(cfg.input_height),
                                                 static_cast<int>(cfg.input_width));
  DecodedLandmarks d = decode(predictor(image_tensor(to_input(cfg, img), cfg.in_channels)));
  const AffineTransform inv = invert_transform(t);
  std::vector<Point2> pts;
  for (const Point2& p : d.landmarks.points()) pts.push_back(inv.map(p));
  d.landmarks = LandmarkSet(std::move(pts));
  return d;
}

RadialErrors dataset_errors(const HeatmapPredictor& predictor, const ModelConfig& cfg,
                            const Dataset& data) {
  const auto& entries = data.manifest.images;
  if (entries.empty()) fail(ErrorKind::kValidation, "dataset '" + data.manifest.name + "' has no images");
  std::vector<RadialErrors> parts(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    const ManifestEntry& e = entries[i];
    const DecodedLandmarks d = predict_landmarks(predictor, cfg, data.images[i], e.image);
    if (d.landmarks.size() != e.landmarks.size()) {
      fail(ErrorKind::kValidation,
           fmt::format("head predicts {} landmarks, dataset '{}' has {}", d.landmarks.size(),
                       data.manifest.name, e.landmarks.size()));
    }
    parts[i] = radial_errors(d.landmarks, e.landmarks, effective_spacing(e.image, e.landmarks));
  });
  RadialErrors all;
  for (const auto& p : parts) pool(all, p);
  return all;
}

MetricsReport evaluate(const HeatmapPredictor& predictor, const ModelConfig& cfg, const Dataset& data,
                       std::span<const double> thresholds) {
  return make_report(data.manifest.name, dataset_errors(predictor, cfg, data), thresholds);
}

MetricsReport evaluate(const FloatModel& model, const Dataset& data, std::optional<std::string> head,
                       std::optional<std::vector<double>> thresholds) {
  const std::string name = head.value_or(data.manifest.name);
  const std::vector<double> t = thresholds.value_or(data.manifest.sdr_thresholds);
  return evaluate(model_predictor(model, name), model.config, data, t);
}

// ---------------------------------------------------------------------------

std::string history_to_csv(const TrainHistory& h) {
  std::string out = "step,loss\n";
  for (std::size_t i = 0; i < h.step_loss.size(); ++i) out += fmt::format("{},{:.9g}\n", i + 1, h.step_loss[i]);
  out += "\nepoch,split,mre\n";
  for (const auto& e : h.epochs) out += fmt::format("{},{},{:.9g}\n", e.epoch, e.split, e.mre);
  return out;
}

TrainHistory history_from_csv(const std::string& text) {
  TrainHistory h;
  std::istringstream in(text);
  std::string line;
  enum { kNone, kSteps, kEpochs } block = kNone;
  std::size_t lineno = 0;
  auto bad = [&](const std::string& what) {
    fail(ErrorKind::kParse, fmt::format("history line {}: {}", lineno, what));
  };
  auto number = [&](const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      bad("'" + s + "' is not a number");
    }
    if (used != s.size()) bad("'" + s + "' is not a number");
    return v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line == "step,loss") {
      block = kSteps;
      continue;
    }
    if (line == "epoch,split,mre") {
      block = kEpochs;
      continue;
    }
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (block == kSteps) {
      if (cells.size() != 2) bad("expected step,loss");
      if (number(cells[0]) != static_cast<double>(h.step_loss.size() + 1)) bad("steps must be consecutive from 1");
      h.step_loss.push_back(number(cells[1]));
    } else if (block == kEpochs) {
      if (cells.size() != 3 || cells[1].empty()) bad("expected epoch,split,mre");
      const double ep = number(cells[0]);
      if (ep < 0 || ep != std::floor(ep)) bad("epoch must be a non-negative integer");
      h.epochs.push_back({static_cast<std::size_t>(ep), cells[1], number(cells[2])});
    } else {
      bad("data before a 'step,loss' or 'epoch,split,mre' header");
    }
  }
  if (block == kNone) fail(ErrorKind::kParse, "history file has no data blocks");
  return h;
}

// ---------------------------------------------------------------------------

namespace {

void check_head(const FloatModel& m, const DatasetManifest& d) {
  const DatasetHead* h = m.config.find_head(d.name);
  if (h && h->landmarks != d.landmark_count) {
    fail(ErrorKind::kValidation,
         fmt::format("head '{}' predicts {} landmarks but the dataset has {}", d.name, h->landmarks,
                     d.landmark_count),
         d.name);
  }
}

FloatModel initial_model(const TrainConfig& cfg) {
  FloatModel m;
  if (cfg.base_checkpoint) {
    m = load_checkpoint(*cfg.base_checkpoint).model;
    if (m.config.input_height != cfg.model.input_height || m.config.input_width != cfg.model.input_width) {
      ModelConfig want = m.config;
      want.input_height = cfg.model.input_height;
      want.input_width = cfg.model.input_width;
      m = load_checkpoint(*cfg.base_checkpoint, want).model;
    }
  } else {
    m = build_model<float>(cfg.model, cfg.seed);
  }
  for (const auto& d : cfg.train) {
    check_head(m, d.manifest);
    if (!m.config.find_head(d.manifest.name)) {
      add_dataset_head(m, {d.manifest.name, d.manifest.landmark_count}, cfg.seed);
    }
  }
  if (cfg.lora && !m.lora) lora_inject(m, *cfg.lora, cfg.seed);
  set_trainable(m, cfg.trainable);
  return m;
}

double mean_mre(const FloatModel& m, const std::vector<Dataset>& sets) {
  double sum = 0.0;
  for (const auto& d : sets) {
    sum += mre(dataset_errors(model_predictor(m, d.manifest.name), m.config, d)).mean;
  }
  return sum / static_cast<double>(sets.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg) {
  if (cfg.train.empty()) fail(ErrorKind::kConfig, "training needs at least one dataset");
  validate_augment(cfg.augment);
  validate_adamw(cfg.optimizer);
  if (cfg.batch_size < 1) fail(ErrorKind::kConfig, "batch size must be at least 1");
  std::size_t total_images = 0;
  for (const auto& d : cfg.train) {
    if (d.images.size() != d.manifest.images.size()) {
      fail(ErrorKind::kValidation, "dataset '" + d.manifest.name + "' is missing decoded images");
    }
    total_images += d.images.size();
  }
  for (const auto& d : cfg.val) {
    if (d.images.size() != d.manifest.images.size()) {
      fail(ErrorKind::kValidation, "dataset '" + d.manifest.name + "' is missing decoded images");
    }
  }
  const std::size_t per_epoch = cfg.steps_per_epoch > 0
                                    ? cfg.steps_per_epoch
                                    : (total_images + cfg.batch_size - 1) / cfg.batch_size;

  TrainResult res;
  res.model = initial_model(cfg);
  for (const auto& d : cfg.val) check_head(res.model, d.manifest);
  res.best = res.model;
  OptimState state;
  OptimState best_state;
  const bool write = !cfg.output_dir.empty();

  std::vector<DatasetManifest> manifests;
  for (const auto& d : cfg.train) manifests.push_back(d.manifest);
  BatchSchedule schedule = multi_dataset_schedule(manifests, cfg.batch_size, derive_seed({cfg.seed, 1}));
  double best_score = std::numeric_limits<double>::infinity();

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Batch batch = schedule.next();
    const Dataset& data = cfg.train[batch.dataset];
    const std::size_t n = batch.indices.size();
    std::vector<Tensor> images(n);
    std::vector<Tensor> targets(n);
    std::vector<std::vector<float>> weights(n);
    parallel_for(n, [&](std::size_t k) {
      const std::size_t i = batch.indices[k];
      std::mt19937_64 rng(derive_seed({cfg.seed, step, k}));
      const Sample s = augment(cfg.augment, {data.images[i], data.manifest.images[i].landmarks},
                               data.manifest.flip_pairs, rng);
      PreparedSample p = prepare_sample(res.model.config, s.image, s.landmarks, cfg.gaussian);
      images[k] = std::move(p.image);
      targets[k] = std::move(p.targets.heatmaps.data);
      weights[k] = std::move(p.targets.target_weight);
    });

    LossAndGrads<float> lg =
        batch_loss_and_grads<float>(res.model, images, targets, weights, data.manifest.name);
    try {
      if (!std::isfinite(lg.loss)) {
        fail(ErrorKind::kNumeric, fmt::format("training diverged at step {}: loss is {}", step + 1, lg.loss));
      }
      adamw_step(res.model, lg.grads, state, cfg.optimizer);
    } catch (const Error& e) {
      if (write && e.kind() == ErrorKind::kNumeric) {
        save_checkpoint(cfg.output_dir / "diverged.ckpt", res.model, &state);
        write_file_atomic(cfg.output_dir / "history.csv", history_to_csv(res.history));
      }
      throw;
    }
    res.history.step_loss.push_back(lg.loss);

    if ((step + 1) % per_epoch == 0 || step + 1 == cfg.steps) {
      const std::size_t epoch = (step + per_epoch) / per_epoch;
      const double train_mre = mean_mre(res.model, cfg.train);
      res.history.epochs.push_back({epoch, "train", train_mre});
      double score = train_mre;
      if (!cfg.val.empty()) {
        score = mean_mre(res.model, cfg.val);
        res.history.epochs.push_back({epoch, "val", score});
      }
      if (score < best_score) {
        best_score = score;
        res.best = res.model;
        best_state = state;
        res.best_epoch = epoch;
        if (write) save_checkpoint(cfg.output_dir / "best.ckpt", res.best, &best_state);
      }
    }
  }

  if (write) {
    if (!res.best_epoch) save_checkpoint(cfg.output_dir / "best.ckpt", res.best, nullptr);
    save_checkpoint(cfg.output_dir / "last.ckpt", res.model, cfg.steps > 0 ? &state : nullptr);
    write_file_atomic(cfg.output_dir / "history.csv", history_to_csv(res.history));
  }
  return res;
}

}  // namespace medpose
