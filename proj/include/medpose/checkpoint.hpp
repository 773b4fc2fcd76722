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

#include "medpose/model.hpp"
#include "medpose/optim.hpp"

namespace medpose {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FloatModel model;
  std::optional<OptimState> optim;
};

/// Layout: "MSAP", u32 LE version, u64 LE header length, JSON header
/// {config, lora, trainable, tensors: [{name, shape, dtype, offset}],
/// optimizer_state?}, then the little-endian f32 payload. Optimizer moments
/// are stored as tensors named "optim.m.<param>" / "optim.v.<param>".
/// Written atomically.
void save_checkpoint(const std::filesystem::path& path, const FloatModel& model,
                     const OptimState* optim = nullptr);

/// Verifies magic, version, sizes and the shape table against the stored
/// config. Format problems raise kFormat; a parameter whose shape disagrees
/// with the config raises kShape naming it, a missing or extra one kValidation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and adapts to `expected`. A checkpoint whose config differs only in
/// input size gets its position embedding bilinearly resized; any other
/// parameter mismatch raises an error naming the parameter.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace medpose
