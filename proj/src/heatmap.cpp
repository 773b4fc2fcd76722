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

#include "medpose/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "medpose/error.hpp"

namespace medpose {

EncodedTargets encode(const LandmarkSet& gt, const GaussianSpec& spec, std::size_t rows,
                      std::size_t cols, double stride) {
  if (rows < 1 || cols < 1) fail(ErrorKind::kConfig, "heatmap grid must be at least 1x1");
  if (!(stride > 0.0)) fail(ErrorKind::kConfig, "heatmap stride must be positive");
  if (!(spec.sigma > 0.0)) fail(ErrorKind::kConfig, "gaussian sigma must be positive");

  const std::size_t n = gt.size();
  EncodedTargets out{{Tensor({n, rows, cols}), stride}, std::vector<float>(n, 0.0f)};
  const double radius = 3.0 * spec.sigma;
  const double inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
  for (std::size_t i = 0; i < n; ++i) {
    if (!gt.visible(i)) continue;
    const double u = gt.point(i).x / stride;
    const double v = gt.point(i).y / stride;
    // Distance from the center to the nearest point of the grid rectangle.
    const double dx = std::max({0.0, -u, u - static_cast<double>(cols - 1)});
    const double dy = std::max({0.0, -v, v - static_cast<double>(rows - 1)});
    if (dx * dx + dy * dy > radius * radius) continue;
    out.target_weight[i] = 1.0f;
    float* channel = out.heatmaps.data.data() + i * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      const double ry = static_cast<double>(r) - v;
      for (std::size_t c = 0; c < cols; ++c) {
        const double cx = static_cast<double>(c) - u;
        channel[r * cols + c] = static_cast<float>(std::exp(-(cx * cx + ry * ry) * inv_two_var));
      }
    }
  }
  return out;
}

DecodedLandmarks decode(const HeatmapStack& pred) {
  if (pred.data.rank() != 3) fail(ErrorKind::kShape, "heatmap stack must be (N, h, w)");
  const std::size_t n = pred.channels();
  const std::size_t rows = pred.rows();
  const std::size_t cols = pred.cols();
  std::vector<Point2> pts(n);
  std::vector<float> conf(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* h = pred.data.data() + i * rows * cols;
    std::size_t best = 0;
    for (std::size_t k = 1; k < rows * cols; ++k) {
      if (h[k] > h[best]) best = k;
    }
    const std::size_t r = best / cols;
    const std::size_t c = best % cols;
    double dx = 0.0;
    double dy = 0.0;
    if (c > 0 && c + 1 < cols) {
      const float left = h[r * cols + c - 1];
      const float right = h[r * cols + c + 1];
      if (right > left) dx = 0.25;
      if (left > right) dx = -0.25;
    }
    if (r > 0 && r + 1 < rows) {
      const float up = h[(r - 1) * cols + c];
      const float down = h[(r + 1) * cols + c];
      if (down > up) dy = 0.25;
      if (up > down) dy = -0.25;
    }
    pts[i] = {(static_cast<double>(c) + dx) * pred.stride, (static_cast<double>(r) + dy) * pred.stride};
    conf[i] = h[best];
  }
  return {LandmarkSet(std::move(pts)), std::move(conf)};
}

namespace {

template <typename T>
void check_mse_inputs(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                      std::span<const float> w) {
  if (pred.shape() != gt.shape()) {
    fail(ErrorKind::kShape, "keypoint_mse: prediction shape " + shape_string(pred.shape()) +
                                " vs target shape " + shape_string(gt.shape()));
  }
  if (pred.rank() != 3 || w.size() != pred.dim(0)) {
    fail(ErrorKind::kShape, "keypoint_mse: expected (N, h, w) heatmaps and N target weights");
  }
}

}  // namespace

template <typename T>
double keypoint_mse(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                    std::span<const float> target_weight) {
  check_mse_inputs(pred, gt, target_weight);
  const std::size_t n = pred.dim(0);
  const std::size_t plane = pred.dim(1) * pred.dim(2);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (target_weight[i] == 0.0f) continue;
    double channel = 0.0;
    for (std::size_t k = 0; k < plane; ++k) {
      const double d = static_cast<double>(pred[i * plane + k]) - static_cast<double>(gt[i * plane + k]);
      channel += d * d;
    }
    total += target_weight[i] * channel;
  }
  return total / static_cast<double>(n);
}

template <typename T>
BasicTensor<T> keypoint_mse_grad(const BasicTensor<T>& pred, const BasicTensor<T>& gt,
                                 std::span<const float> target_weight) {
  check_mse_inputs(pred, gt, target_weight);
  const std::size_t n = pred.dim(0);
  const std::size_t plane = pred.dim(1) * pred.dim(2);
  BasicTensor<T> grad(pred.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const T scale = static_cast<T>(2.0 * target_weight[i] / static_cast<double>(n));
    if (scale == T(0)) continue;
    for (std::size_t k = 0; k < plane; ++k) {
      grad[i * plane + k] = scale * (pred[i * plane + k] - gt[i * plane + k]);
    }
  }
  return grad;
}

template double keypoint_mse<float>(const Tensor&, const Tensor&, std::span<const float>);
template double keypoint_mse<double>(const Tensor64&, const Tensor64&, std::span<const float>);
template Tensor keypoint_mse_grad<float>(const Tensor&, const Tensor&, std::span<const float>);
template Tensor64 keypoint_mse_grad<double>(const Tensor64&, const Tensor64&, std::span<const float>);

}  // namespace medpose
