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

#include <random>
#include <utility>
#include <vector>

#include "medpose/image.hpp"
#include "medpose/landmark.hpp"

namespace medpose {

using FlipPairs = std::vector<std::pair<std::size_t, std::size_t>>;

struct PhotometricConfig {
  double brightness_delta = 32.0 / 255.0;  // shift drawn from [-delta, delta]
  double contrast_low = 0.75;
  double contrast_high = 1.25;
  double prob = 0.5;  // per op
};

struct DropoutConfig {
  int max_holes = 4;
  double min_fraction = 0.05;  // hole side as a fraction of min(H, W)
  double max_fraction = 0.15;
  double prob = 0.5;
};

struct AugmentConfig {
  double flip_prob = 0.5;
  PhotometricConfig photometric;
  DropoutConfig coarse_dropout;

  /// All probabilities zero.
  static AugmentConfig none();
};

void validate_augment(const AugmentConfig& cfg);

struct Sample {
  GrayImage image;
  LandmarkSet landmarks;
};

/// Mirrors about the vertical axis (x' = (w-1) - x) and swaps the indices of
/// each flip pair, visibility included.
Sample flip_h(const Sample& s, const FlipPairs& flip_pairs);

GrayImage adjust_brightness(const GrayImage& img, double delta);
/// mean + factor * (v - mean), clamped to [0, 1].
GrayImage adjust_contrast(const GrayImage& img, double factor);

/// Random brightness then contrast, each applied with its probability. The
/// same number of draws is consumed whether or not an op fires.
GrayImage photometric(const GrayImage& img, std::mt19937_64& rng, const PhotometricConfig& cfg);

struct Hole {
  int x = 0, y = 0, width = 0, height = 0;
  friend bool operator==(const Hole&, const Hole&) = default;
};

/// Fills each rectangle (clipped to the image) with the mean of `img`.
GrayImage fill_holes(const GrayImage& img, const std::vector<Hole>& holes);

std::pair<GrayImage, std::vector<Hole>> coarse_dropout(const GrayImage& img, std::mt19937_64& rng,
                                                       const DropoutConfig& cfg);

/// flip -> photometric -> coarse dropout, drawing only from `rng`.
Sample augment(const AugmentConfig& cfg, const Sample& s, const FlipPairs& flip_pairs,
               std::mt19937_64& rng);

}  // namespace medpose
