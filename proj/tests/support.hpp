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

#include <cmath>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "medpose/grad_check.hpp"
#include "medpose/tensor.hpp"

namespace medpose::testing {

inline Tensor64 random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor64 t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

inline Tensor random_tensor_f(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("medpose_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Flattens several tensors into one parameter vector for grad_check.
class Packer {
 public:
  explicit Packer(std::vector<Shape> shapes) : shapes_(std::move(shapes)) {}

  Tensor64 pack(const std::vector<Tensor64>& parts) const {
    std::vector<double> flat;
    for (const auto& p : parts) flat.insert(flat.end(), p.values().begin(), p.values().end());
    const std::size_t n = flat.size();
    return Tensor64({n}, std::move(flat));
  }

  std::vector<Tensor64> unpack(const Tensor64& theta) const {
    std::vector<Tensor64> out;
    std::size_t at = 0;
    for (const auto& s : shapes_) {
      const std::size_t n = shape_numel(s);
      std::vector<double> v(theta.values().begin() + static_cast<std::ptrdiff_t>(at),
                            theta.values().begin() + static_cast<std::ptrdiff_t>(at + n));
      out.emplace_back(s, std::move(v));
      at += n;
    }
    return out;
  }

 private:
  std::vector<Shape> shapes_;
};

/// Scalar probe loss sum(out * probe) for a primitive with several inputs.
/// `forward` maps inputs to the output; `backward` maps inputs and the
/// upstream gradient (the probe) to one gradient per input.
///
/// `exact_zero` marks coordinates whose true gradient vanishes identically
/// (e.g. the key bias under softmax shift invariance). Finite differences
/// only see roundoff there, so those coordinates are held to |g| <= 1e-12
/// instead and the relative check covers the rest.
struct PrimitiveProbe {
  std::vector<Tensor64> inputs;
  std::function<Tensor64(const std::vector<Tensor64>&)> forward;
  std::function<std::vector<Tensor64>(const std::vector<Tensor64>&, const Tensor64&)> backward;
  std::function<bool(std::size_t input, std::size_t index)> exact_zero;
};

/// Largest relative error over checked coordinates, or +inf when an
/// exact-zero coordinate has a nonzero analytic gradient.
inline double probe_grad_error(const PrimitiveProbe& p, std::uint64_t seed, double h = 1e-5,
                               std::size_t coords = 256) {
  std::vector<Shape> shapes;
  for (const auto& t : p.inputs) shapes.push_back(t.shape());
  const Packer packer(shapes);
  std::mt19937_64 rng(seed);
  const Tensor64 out0 = p.forward(p.inputs);
  const Tensor64 probe = random_tensor(out0.shape(), rng);
  const Tensor64 full = packer.pack(p.inputs);

  std::vector<std::size_t> free;  // flat indices under the relative check
  std::vector<std::size_t> zero;
  std::size_t flat = 0;
  for (std::size_t k = 0; k < p.inputs.size(); ++k) {
    for (std::size_t i = 0; i < p.inputs[k].numel(); ++i, ++flat) {
      (p.exact_zero && p.exact_zero(k, i) ? zero : free).push_back(flat);
    }
  }
  auto expand = [&](const Tensor64& sub) {
    Tensor64 theta = full;
    for (std::size_t j = 0; j < free.size(); ++j) theta[free[j]] = sub[j];
    return theta;
  };
  auto analytic = [&](const Tensor64& theta) { return packer.pack(p.backward(packer.unpack(theta), probe)); };

  const Tensor64 g0 = analytic(full);
  for (std::size_t z : zero) {
    if (std::abs(g0[z]) > 1e-12) return std::numeric_limits<double>::infinity();
  }

  Differentiable f;
  f.value = [&](const Tensor64& sub) {
    const Tensor64 out = p.forward(packer.unpack(expand(sub)));
    double s = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) s += out[i] * probe[i];
    return s;
  };
  f.gradient = [&](const Tensor64& sub) {
    const Tensor64 g = analytic(expand(sub));
    Tensor64 out({free.size()});
    for (std::size_t j = 0; j < free.size(); ++j) out[j] = g[free[j]];
    return out;
  };
  Tensor64 start({free.size()});
  for (std::size_t j = 0; j < free.size(); ++j) start[j] = full[free[j]];
  return grad_check(f, start, h, seed + 1, coords);
}

}  // namespace medpose::testing
