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

#include "medpose/optim.hpp"

#include <cmath>
#include <string_view>

#include "medpose/error.hpp"

namespace medpose {

void validate_adamw(const AdamWConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::kConfig, std::string("optimizer: ") + what);
  };
  require(c.base_lr > 0.0 && std::isfinite(c.base_lr), "base_lr must be positive");
  require(c.layer_decay > 0.0 && c.layer_decay <= 1.0, "layer decay must lie in (0, 1]");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(c.beta2 >= 0.0 && c.beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(c.eps > 0.0, "eps must be positive");
  require(c.weight_decay >= 0.0 && std::isfinite(c.weight_decay), "weight_decay must be non-negative");
}

std::size_t param_depth(const std::string& name, std::size_t depth) {
  if (name.starts_with("patch_embed.") || name == "pos_embed") return 0;
  if (name.starts_with("head.") || name.starts_with("norm.")) return depth + 1;
  if (name.starts_with("blocks.")) {
    const std::size_t dot = name.find('.', 7);
    if (dot != std::string::npos && dot > 7) {
      std::size_t i = 0;
      for (std::size_t k = 7; k < dot; ++k) {
        const char c = name[k];
        if (c < '0' || c > '9') fail(ErrorKind::kValidation, "unknown parameter '" + name + "'", name);
        i = i * 10 + static_cast<std::size_t>(c - '0');
      }
      if (i < depth) return i + 1;
    }
  }
  fail(ErrorKind::kValidation, "unknown parameter '" + name + "'", name);
}

double layerwise_lr(const std::string& name, std::size_t depth, double base_lr, double decay) {
  const std::size_t d = param_depth(name, depth);
  return base_lr * std::pow(decay, static_cast<double>(depth + 1 - d));
}

bool uses_weight_decay(const std::string& name) {
  if (name == "pos_embed" || name.ends_with(".bias")) return false;
  if (name.starts_with("norm.") || name.find(".norm") != std::string::npos) return false;
  return true;
}

void adamw_update(std::span<float> theta, std::span<const float> grad, Moments& mo, std::size_t t,
                  double lr, double weight_decay, const AdamWConfig& cfg) {
  if (grad.size() != theta.size()) fail(ErrorKind::kShape, "adamw: gradient size mismatch");
  if (t < 1) fail(ErrorKind::kConfig, "adamw: step counter starts at 1");
  if (!(lr > 0.0)) fail(ErrorKind::kConfig, "adamw: learning rate must be positive");
  if (mo.m.numel() != theta.size()) {
    mo.m = Tensor({theta.size()});
    mo.v = Tensor({theta.size()});
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g * g;
    mo.m[i] = static_cast<float>(m);
    mo.v[i] = static_cast<float>(v);
    const double th = theta[i];
    const double update = (m / c1) / (std::sqrt(v / c2) + cfg.eps);
    theta[i] = static_cast<float>(th - lr * update - lr * weight_decay * th);
  }
}

void adamw_step(FloatModel& model, const std::map<std::string, Tensor>& grads, OptimState& state,
                const AdamWConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (g.numel() != model.param(name).numel()) {
      fail(ErrorKind::kShape, "gradient shape mismatch for '" + name + "'", name);
    }
    for (float v : g.values()) {
      if (!std::isfinite(v)) fail(ErrorKind::kNumeric, "non-finite gradient for '" + name + "'", name);
    }
  }
  ++state.step;
  for (const auto& [name, g] : grads) {
    const double lr = layerwise_lr(name, model.config.depth, cfg.base_lr, cfg.layer_decay);
    const double wd = uses_weight_decay(name) ? cfg.weight_decay : 0.0;
    adamw_update(model.param(name).values(), g.values(), state.moments[name], state.step, lr, wd, cfg);
  }
}

}  // namespace medpose
