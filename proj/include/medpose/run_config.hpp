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
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "medpose/augment.hpp"
#include "medpose/heatmap.hpp"
#include "medpose/model.hpp"
#include "medpose/optim.hpp"

namespace medpose {

enum class RunMode { kGeneralist, kSpecialist, kFewShot };

const char* to_string(RunMode mode) noexcept;

/// A training run described by one JSON document. Relative paths resolve
/// against the directory of the config file.
struct RunConfig {
  RunMode mode = RunMode::kGeneralist;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "run";
  std::vector<std::filesystem::path> datasets;
  std::vector<std::filesystem::path> val_datasets;
  std::optional<std::filesystem::path> base_checkpoint;
  ModelConfig model;  // dataset_heads may be empty; heads follow the datasets
  bool model_given = false;  // false: a base checkpoint supplies the architecture
  std::optional<LoraConfig> lora;
  std::optional<TrainMode> trainable;  // default: lora_only with LoRA, else full
  AugmentConfig augment;
  AdamWConfig optimizer;
  std::size_t batch_size = 8;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> epochs;
  std::size_t steps_per_epoch = 0;
  GaussianSpec heatmap;
  std::size_t few_shot_patients = 3;
  std::uint64_t few_shot_seed = 0;
};

/// Sets a dotted key (e.g. "optimizer.base_lr") to `value`, parsed as JSON
/// when possible and as a plain string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
nlohmann::json run_config_to_json(const RunConfig& cfg);

/// Reads the file, applies overrides, parses and checks mode invariants and
/// that every referenced path exists.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

void validate_run_config(const RunConfig& cfg);

}  // namespace medpose
