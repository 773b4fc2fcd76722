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

#include <span>
#include <vector>

#include "medpose/landmark.hpp"
#include "medpose/tensor.hpp"

namespace medpose {

/// Per-landmark confidence maps, shape (N, h', w'). `stride` is the number of
/// model-input pixels per heatmap cell.
struct HeatmapStack {
  Tensor data;
  double stride = 4.0;

  std::size_t channels() const { return data.dim(0); }
  std::size_t rows() const { return data.dim(1); }
  std::size_t cols() const { return data.dim(2); }
};

struct GaussianSpec {
  double sigma = 2.0;  // heatmap cells
};

struct EncodedTargets {
  HeatmapStack heatmaps;
  std::vector<float> target_weight;  // 1 for supervised channels, 0 otherwise
};

/// Peak-1 Gaussian at (x/stride, y/stride) per visible landmark. Invisible
/// landmarks, and landmarks whose 3-sigma disc misses the grid entirely,
/// produce an all-zero channel with target weight 0.
EncodedTargets encode(const LandmarkSet& gt, const GaussianSpec& spec, std::size_t rows,
                      std::size_t cols, double stride);

struct DecodedLandmarks {
  LandmarkSet landmarks;  // model-input space, all visible
  std::vector<float> confidence;
};

/// Argmax per channel (ties to the smallest row-major index) refined by a
/// quarter cell toward the larger neighbor along each axis.
DecodedLandmarks decode(const HeatmapStack& pred);

/// (1/N) * sum_i w_i * ||pred_i - gt_i||^2 over (N, h, w) tensors.
template <typename T>
double keypoint_mse(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                    std::span<const float> target_weight);

/// d loss / d pred = (2/N) * w_i * (pred_i - gt_i).
template <typename T>
BasicTensor<T> keypoint_mse_grad(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                                 std::span<const float> target_weight);

inline double keypoint_mse(const HeatmapStack& pred, const HeatmapStack& gt,
                           std::span<const float> target_weight) {
  return keypoint_mse(pred.data, gt.data, target_weight);
}

inline Tensor keypoint_mse_grad(const HeatmapStack& pred, const HeatmapStack& gt,
                                std::span<const float> target_weight) {
  return keypoint_mse_grad(pred.data, gt.data, target_weight);
}

}  // namespace medpose
