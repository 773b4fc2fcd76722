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

#include "medpose/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "medpose/error.hpp"

namespace medpose {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const Differentiable& f, const Tensor64& theta, double h, std::uint64_t seed,
                  std::size_t min_coords) {
  if (!(h >= 1e-7 && h <= 1e-3)) fail(ErrorKind::kConfig, "finite-difference step must lie in [1e-7, 1e-3]");
  const Tensor64 analytic = f.gradient(theta);
  if (analytic.numel() != theta.numel()) {
    fail(ErrorKind::kShape, "gradient has " + std::to_string(analytic.numel()) +
                                " entries for " + std::to_string(theta.numel()) + " parameters");
  }

  std::vector<std::size_t> coords(theta.numel());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > min_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(min_coords);
    std::sort(coords.begin(), coords.end());
  }

  double worst = 0.0;
  Tensor64 probe = theta;
  for (std::size_t i : coords) {
    const double saved = probe[i];
    probe[i] = saved + h;
    const double up = f.value(probe);
    probe[i] = saved - h;
    const double down = f.value(probe);
    probe[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
      fail(ErrorKind::kNumeric, "non-finite value at coordinate " + std::to_string(i));
    }
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

}  // namespace medpose
