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
#include <functional>

#include "medpose/tensor.hpp"

namespace medpose {

/// A scalar function of a parameter vector together with its analytic gradient.
struct Differentiable {
  std::function<double(const Tensor64&)> value;
  std::function<Tensor64(const Tensor64&)> gradient;
};

/// Relative error |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares the analytic gradient at theta against central differences
/// (f(theta + h e) - f(theta - h e)) / 2h on `min_coords` randomly chosen
/// coordinates (all of them when theta is smaller) and returns the largest
/// relative error. h must lie in [1e-7, 1e-3].
double grad_check(const Differentiable& f, const Tensor64& theta, double h, std::uint64_t seed,
                  std::size_t min_coords = 64);

}  // namespace medpose
