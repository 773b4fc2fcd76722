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

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "medpose/model.hpp"
#include "medpose/tensor.hpp"

namespace medpose {

struct AdamWConfig {
  double base_lr = 5e-4;
  double layer_decay = 0.85;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

void validate_adamw(const AdamWConfig& cfg);

struct Moments {
  Tensor m;
  Tensor v;
};

struct OptimState {
  std::size_t step = 0;
  std::map<std::string, Moments> moments;
};

/// Depth index used for layer-wise decay: patch/pos embedding 0, block i
/// (adapters included) i+1, final norm and everything under head. L+1.
std::size_t param_depth(const std::string& name, std::size_t depth);

/// base_lr * decay^(L+1 - depth_index).
double layerwise_lr(const std::string& name, std::size_t depth, double base_lr, double decay);

/// Biases, norm parameters and the position embedding are not decayed.
bool uses_weight_decay(const std::string& name);

/// One AdamW update of a single tensor at (1-based) step t:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - lr * mhat / (sqrt(vhat) + eps) - lr * wd * theta
void adamw_update(std::span<float> theta, std::span<const float> grad, Moments& moments,
                  std::size_t t, double lr, double weight_decay, const AdamWConfig& cfg);

/// Applies one step to every parameter in `grads`. Any non-finite gradient
/// aborts the step before anything is modified.
void adamw_step(FloatModel& model, const std::map<std::string, Tensor>& grads, OptimState& state,
                const AdamWConfig& cfg);

}  // namespace medpose
