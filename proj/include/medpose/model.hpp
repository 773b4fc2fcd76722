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
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "medpose/tensor.hpp"

namespace medpose {

struct DatasetHead {
  std::string name;
  std::size_t landmarks = 1;

  friend bool operator==(const DatasetHead&, const DatasetHead&) = default;
};

struct ModelConfig {
  std::size_t input_height = 256;
  std::size_t input_width = 256;
  std::size_t in_channels = 1;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 64;
  std::size_t depth = 4;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t deconv_stages = 2;
  std::size_t deconv_channels = 32;
  std::vector<DatasetHead> dataset_heads;

  std::size_t grid_height() const { return input_height / patch_size; }
  std::size_t grid_width() const { return input_width / patch_size; }
  std::size_t tokens() const { return grid_height() * grid_width(); }
  std::size_t heatmap_height() const { return grid_height() << deconv_stages; }
  std::size_t heatmap_width() const { return grid_width() << deconv_stages; }
  /// Model-input pixels per heatmap cell: p / 2^stages.
  double heatmap_stride() const {
    return static_cast<double>(patch_size) / static_cast<double>(std::size_t{1} << deconv_stages);
  }
  const DatasetHead* find_head(const std::string& dataset) const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void validate_config(const ModelConfig& cfg);
void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 4.0;
  bool qkv = true;
  bool proj = true;

  double scale() const { return alpha / static_cast<double>(rank); }

  friend bool operator==(const LoraConfig&, const LoraConfig&) = default;
};

void validate_lora(const LoraConfig& lc);
void to_json(nlohmann::json& j, const LoraConfig& lc);
void from_json(const nlohmann::json& j, LoraConfig& lc);

enum class TrainMode { kFull, kLoraOnly, kHeadOnly };

TrainMode parse_train_mode(const std::string& text);
const char* to_string(TrainMode mode) noexcept;

/// Backbone + heatmap head as a flat map of named tensors.
///
/// Names: patch_embed.{weight,bias}, pos_embed, blocks.{i}.norm1.{weight,bias},
/// blocks.{i}.attn.{qkv,proj}.{weight,bias}[.lora_A, .lora_B],
/// blocks.{i}.norm2.*, blocks.{i}.mlp.{fc1,fc2}.*, norm.*,
/// head.deconv.{s}.{weight,bias}, head.deconv.{s}.norm.*, head.out.{dataset}.*
template <typename T>
struct Model {
  ModelConfig config;
  std::optional<LoraConfig> lora;
  std::map<std::string, BasicTensor<T>> params;
  std::set<std::string> trainable;

  const BasicTensor<T>& param(const std::string& name) const;
  BasicTensor<T>& param(const std::string& name);
  bool is_trainable(const std::string& name) const { return trainable.count(name) != 0; }
  std::size_t parameter_count() const;
};

using FloatModel = Model<float>;

/// Truncated-normal (std 0.02, cut at 2 std) weights, zero biases, unit norm
/// scales, zero position embedding. Each tensor draws from its own stream
/// keyed by (seed, name), so adding a head never perturbs the others.
template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed);

/// Adds a 1x1 output conv for a new dataset (trainable).
template <typename T>
void add_dataset_head(Model<T>& m, const DatasetHead& head, std::uint64_t seed);

/// (C, H, W) image -> (N_d, H/stride, W/stride) heatmaps.
template <typename T>
BasicTensor<T> forward(const Model<T>& m, const BasicTensor<T>& image, const std::string& dataset);

template <typename T>
struct LossAndGrads {
  double loss = 0.0;
  std::map<std::string, BasicTensor<T>> grads;  // trainable parameters only
};

/// keypoint_mse of one example plus gradients of every trainable parameter.
template <typename T>
LossAndGrads<T> loss_and_grads(const Model<T>& m, const BasicTensor<T>& image,
                               const BasicTensor<T>& target, std::span<const float> weights,
                               const std::string& dataset);

/// Mean over the batch of per-example losses and gradients. Examples may run
/// in parallel; gradients are summed in example order.
template <typename T>
LossAndGrads<T> batch_loss_and_grads(const Model<T>& m, std::span<const BasicTensor<T>> images,
                                     std::span<const BasicTensor<T>> targets,
                                     std::span<const std::vector<float>> weights,
                                     const std::string& dataset);

/// Attaches A ~ N(0, 0.02^2) of shape (r, din) and B = 0 of shape (dout, r)
/// to each selected attention site, then switches to the lora_only regime.
template <typename T>
void lora_inject(Model<T>& m, const LoraConfig& lc, std::uint64_t seed);

/// Folds W += (alpha/r) B A into every adapted weight and drops the adapters.
template <typename T>
void lora_merge(Model<T>& m);

template <typename T>
void set_trainable(Model<T>& m, TrainMode mode);

/// Bilinear resample of a (gh*gw, d) position table onto a (nh*nw, d) grid,
/// sampling at pixel centers.
template <typename T>
BasicTensor<T> resize_pos_embed(const BasicTensor<T>& table, std::size_t gh, std::size_t gw,
                                std::size_t nh, std::size_t nw);

template <typename U, typename T>
Model<U> cast_model(const Model<T>& m) {
  Model<U> out;
  out.config = m.config;
  out.lora = m.lora;
  out.trainable = m.trainable;
  for (const auto& [name, t] : m.params) out.params.emplace(name, t.template cast<U>());
  return out;
}

}  // namespace medpose
