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

#include "medpose/augment.hpp"

#include <algorithm>
#include <cmath>

#include "medpose/error.hpp"

namespace medpose {

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.flip_prob = 0.0;
  c.photometric.prob = 0.0;
  c.coarse_dropout.prob = 0.0;
  return c;
}

void validate_augment(const AugmentConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) fail(ErrorKind::kConfig, std::string("augment: ") + what);
  };
  auto is_prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  require(is_prob(c.flip_prob), "flip_prob must lie in [0, 1]");
  require(is_prob(c.photometric.prob), "photometric prob must lie in [0, 1]");
  require(is_prob(c.coarse_dropout.prob), "dropout prob must lie in [0, 1]");
  require(c.photometric.brightness_delta >= 0.0 && c.photometric.brightness_delta <= 1.0,
          "brightness_delta must lie in [0, 1]");
  require(c.photometric.contrast_low > 0.0 && c.photometric.contrast_low <= c.photometric.contrast_high,
          "contrast range must be positive and ordered");
  require(c.coarse_dropout.max_holes >= 1, "max_holes must be at least 1");
  require(c.coarse_dropout.min_fraction > 0.0 &&
              c.coarse_dropout.min_fraction <= c.coarse_dropout.max_fraction &&
              c.coarse_dropout.max_fraction <= 1.0,
          "hole size fractions must satisfy 0 < min <= max <= 1");
}

Sample flip_h(const Sample& s, const FlipPairs& flip_pairs) {
  const GrayImage& in = s.image;
  Sample out{GrayImage(in.width, in.height), s.landmarks};
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) out.image.at(in.width - 1 - x, y) = in.at(x, y);
  }
  const double w1 = static_cast<double>(in.width - 1);
  LandmarkSet& lm = out.landmarks;
  for (std::size_t i = 0; i < lm.size(); ++i) {
    lm.set_point(i, {w1 - lm.point(i).x, lm.point(i).y});
  }
  for (const auto& [a, b] : flip_pairs) {
    if (a >= lm.size() || b >= lm.size()) fail(ErrorKind::kValidation, "flip pair out of range");
    const Point2 pa = lm.point(a);
    const bool va = lm.visible(a);
    lm.set_point(a, lm.point(b));
    lm.set_visible(a, lm.visible(b));
    lm.set_point(b, pa);
    lm.set_visible(b, va);
  }
  return out;
}

GrayImage adjust_brightness(const GrayImage& img, double delta) {
  GrayImage out = img;
  for (float& v : out.pixels) v = static_cast<float>(std::clamp(v + delta, 0.0, 1.0));
  return out;
}

GrayImage adjust_contrast(const GrayImage& img, double factor) {
  GrayImage out = img;
  const double mean = img.mean();
  for (float& v : out.pixels) v = static_cast<float>(std::clamp(mean + factor * (v - mean), 0.0, 1.0));
  return out;
}

GrayImage photometric(const GrayImage& img, std::mt19937_64& rng, const PhotometricConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool do_brightness = unit(rng) < cfg.prob;
  const double delta = cfg.brightness_delta * (2.0 * unit(rng) - 1.0);
  const bool do_contrast = unit(rng) < cfg.prob;
  const double factor = cfg.contrast_low + (cfg.contrast_high - cfg.contrast_low) * unit(rng);
  GrayImage out = do_brightness ? adjust_brightness(img, delta) : img;
  if (do_contrast) out = adjust_contrast(out, factor);
  return out;
}

GrayImage fill_holes(const GrayImage& img, const std::vector<Hole>& holes) {
  GrayImage out = img;
  const float fill = img.mean();
  for (const Hole& h : holes) {
    for (int y = std::max(0, h.y); y < std::min(img.height, h.y + h.height); ++y) {
      for (int x = std::max(0, h.x); x < std::min(img.width, h.x + h.width); ++x) out.at(x, y) = fill;
    }
  }
  return out;
}

std::pair<GrayImage, std::vector<Hole>> coarse_dropout(const GrayImage& img, std::mt19937_64& rng,
                                                       const DropoutConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (!(unit(rng) < cfg.prob)) return {img, {}};
  const int count = std::uniform_int_distribution<int>(1, cfg.max_holes)(rng);
  const double side = std::min(img.width, img.height);
  std::vector<Hole> holes;
  for (int k = 0; k < count; ++k) {
    auto extent = [&](int limit) {
      const double frac = cfg.min_fraction + (cfg.max_fraction - cfg.min_fraction) * unit(rng);
      return std::clamp(static_cast<int>(std::lround(frac * side)), 1, limit);
    };
    Hole h;
    h.width = extent(img.width);
    h.height = extent(img.height);
    h.x = std::uniform_int_distribution<int>(0, img.width - h.width)(rng);
    h.y = std::uniform_int_distribution<int>(0, img.height - h.height)(rng);
    holes.push_back(h);
  }
  return {fill_holes(img, holes), std::move(holes)};
}

Sample augment(const AugmentConfig& cfg, const Sample& s, const FlipPairs& flip_pairs,
               std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Sample out = unit(rng) < cfg.flip_prob ? flip_h(s, flip_pairs) : s;
  out.image = photometric(out.image, rng, cfg.photometric);
  out.image = coarse_dropout(out.image, rng, cfg.coarse_dropout).first;
  return out;
}

}  // namespace medpose
