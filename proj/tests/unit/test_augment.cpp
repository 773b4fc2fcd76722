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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "medpose/augment.hpp"
#include "medpose/error.hpp"

namespace medpose {
namespace {

GrayImage noise_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  GrayImage img(w, h);
  for (float& v : img.pixels) v = u(rng);
  return img;
}

Sample noise_sample(int w, int h, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed + 100);
  std::uniform_real_distribution<double> ux(0.0, w - 1.0), uy(0.0, h - 1.0);
  std::vector<Point2> pts;
  std::vector<bool> vis;
  for (std::size_t i = 0; i < n; ++i) {
    // Quantized to 1/256 px so (w-1) - x is exact in double.
    pts.push_back({std::round(ux(rng) * 256) / 256, std::round(uy(rng) * 256) / 256});
    vis.push_back(i % 3 != 1);
  }
  return {noise_image(w, h, seed), LandmarkSet(pts, vis)};
}

TEST(Flip, CoordinateFormula) {
  const Sample s{GrayImage(100, 4), LandmarkSet({{10.0, 2.0}})};
  const Sample f = flip_h(s, {});
  EXPECT_EQ(f.landmarks.point(0).x, 89.0);
  EXPECT_EQ(f.landmarks.point(0).y, 2.0);
}

TEST(Flip, MirrorsPixels) {
  const GrayImage img = noise_image(7, 3, 1);
  const Sample f = flip_h({img, LandmarkSet()}, {});
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 7; ++x) EXPECT_EQ(f.image.at(x, y), img.at(6 - x, y));
  }
}

TEST(Flip, PairSwapCarriesVisibility) {
  std::vector<Point2> pts;
  for (int i = 0; i < 6; ++i) pts.push_back({double(i), double(10 + i)});
  std::vector<bool> vis{true, true, true, false, true, true};
  const Sample f = flip_h({GrayImage(20, 20), LandmarkSet(pts, vis)}, {{3, 5}});
  EXPECT_EQ(f.landmarks.point(3).x, 19.0 - 5.0);
  EXPECT_EQ(f.landmarks.point(3).y, 15.0);
  EXPECT_TRUE(f.landmarks.visible(3));
  EXPECT_EQ(f.landmarks.point(5).x, 19.0 - 3.0);
  EXPECT_EQ(f.landmarks.point(5).y, 13.0);
  EXPECT_FALSE(f.landmarks.visible(5));
  EXPECT_EQ(f.landmarks.point(0).x, 19.0);
}

TEST(Flip, InvolutionProperty) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const int w = 3 + static_cast<int>(seed % 17), h = 2 + static_cast<int>(seed % 5);
    const Sample s = noise_sample(w, h, 8, seed);
    const FlipPairs pairs{{0, 1}, {2, 7}, {4, 5}};
    EXPECT_EQ(flip_h(flip_h(s, pairs), pairs).image, s.image);
    EXPECT_EQ(flip_h(flip_h(s, pairs), pairs).landmarks, s.landmarks) << seed;
  }
}

TEST(Flip, BadPairRejected) {
  EXPECT_THROW(flip_h({GrayImage(4, 4), LandmarkSet({{1, 1}})}, {{0, 3}}), Error);
}

TEST(Photometric, BrightnessOnConstant) {
  const GrayImage out = adjust_brightness(GrayImage(5, 5, 0.5f), 0.1);
  for (float v : out.pixels) EXPECT_FLOAT_EQ(v, 0.6f);
  for (float v : adjust_brightness(GrayImage(2, 2, 0.95f), 0.1).pixels) EXPECT_EQ(v, 1.0f);
}

TEST(Photometric, ContrastAboutMeanClamps) {
  GrayImage img(2, 1);
  img.pixels = {0.1f, 0.9f};
  const GrayImage out = adjust_contrast(img, 1.25);
  EXPECT_NEAR(out.pixels[0], 0.0f, 1e-7);
  EXPECT_FLOAT_EQ(out.pixels[1], 1.0f);
  const GrayImage mild = adjust_contrast(img, 0.5);
  EXPECT_FLOAT_EQ(mild.pixels[0], 0.3f);
  EXPECT_FLOAT_EQ(mild.pixels[1], 0.7f);
}

TEST(Photometric, InactiveIsIdentityAndDrawCountFixed) {
  const GrayImage img = noise_image(9, 9, 2);
  PhotometricConfig off;
  off.prob = 0.0;
  PhotometricConfig on;
  on.prob = 1.0;
  std::mt19937_64 a(5), b(5);
  EXPECT_EQ(photometric(img, a, off), img);
  const GrayImage changed = photometric(img, b, on);
  EXPECT_NE(changed, img);
  for (float v : changed.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_EQ(a(), b());
}

TEST(Dropout, InactiveIsIdentity) {
  const GrayImage img = noise_image(16, 16, 3);
  DropoutConfig cfg;
  cfg.prob = 0.0;
  std::mt19937_64 rng(1);
  const auto [out, holes] = coarse_dropout(img, rng, cfg);
  EXPECT_EQ(out, img);
  EXPECT_TRUE(holes.empty());
}

TEST(Dropout, FixedHoleFillsMean) {
  const GrayImage img = noise_image(24, 24, 4);
  const GrayImage out = fill_holes(img, {{8, 8, 8, 8}});
  const float mean = img.mean();
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 24; ++x) {
      const bool inside = x >= 8 && x < 16 && y >= 8 && y < 16;
      EXPECT_EQ(out.at(x, y), inside ? mean : img.at(x, y));
    }
  }
}

TEST(Dropout, HolesRespectConfigAndBounds) {
  DropoutConfig cfg;
  cfg.prob = 1.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const int w = 20 + static_cast<int>(seed % 60), h = 20 + static_cast<int>(seed % 37);
    const GrayImage img = noise_image(w, h, seed);
    std::mt19937_64 rng(seed);
    const auto [out, holes] = coarse_dropout(img, rng, cfg);
    ASSERT_GE(holes.size(), 1u);
    ASSERT_LE(holes.size(), 4u);
    const double side = std::min(w, h);
    for (const Hole& hole : holes) {
      EXPECT_GE(hole.x, 0);
      EXPECT_GE(hole.y, 0);
      EXPECT_LE(hole.x + hole.width, w);
      EXPECT_LE(hole.y + hole.height, h);
      EXPECT_GE(hole.width, std::max(1.0, std::floor(0.05 * side)));
      EXPECT_LE(hole.width, std::ceil(0.15 * side));
    }
    EXPECT_EQ(out, fill_holes(img, holes));
  }
}

TEST(Dropout, SameSeedSameHoles) {
  DropoutConfig cfg;
  cfg.prob = 1.0;
  const GrayImage img = noise_image(64, 48, 5);
  std::mt19937_64 a(42), b(42);
  EXPECT_EQ(coarse_dropout(img, a, cfg).second, coarse_dropout(img, b, cfg).second);
}

TEST(Compose, AllProbabilitiesZeroIsIdentity) {
  const Sample s = noise_sample(30, 20, 5, 6);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    const Sample out = augment(AugmentConfig::none(), s, {{0, 1}}, rng);
    EXPECT_EQ(out.image, s.image);
    EXPECT_EQ(out.landmarks, s.landmarks);
  }
}

TEST(Compose, FixedSeedBitIdentical) {
  const Sample s = noise_sample(40, 40, 6, 7);
  AugmentConfig cfg;
  cfg.flip_prob = cfg.photometric.prob = cfg.coarse_dropout.prob = 1.0;
  std::mt19937_64 a(9), b(9);
  const Sample x = augment(cfg, s, {{1, 2}}, a);
  const Sample y = augment(cfg, s, {{1, 2}}, b);
  EXPECT_EQ(x.image, y.image);
  EXPECT_EQ(x.landmarks, y.landmarks);
}

// Only the flip may move landmarks.
TEST(Compose, LandmarksOnlyChangeByFlip) {
  const Sample s = noise_sample(33, 21, 6, 8);
  const FlipPairs pairs{{0, 5}};
  AugmentConfig cfg;
  cfg.photometric.prob = cfg.coarse_dropout.prob = 1.0;
  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const Sample out = augment(cfg, s, pairs, rng);
    if (out.landmarks == s.landmarks) continue;
    EXPECT_EQ(out.landmarks, flip_h(s, pairs).landmarks);
    ++flipped;
  }
  EXPECT_GT(flipped, 30);
  EXPECT_LT(flipped, 70);
}

TEST(Compose, FlipWithoutPairsIsGeometricOnly) {
  const Sample s = noise_sample(10, 10, 3, 9);
  AugmentConfig cfg = AugmentConfig::none();
  cfg.flip_prob = 1.0;
  std::mt19937_64 rng(1);
  const Sample out = augment(cfg, s, {}, rng);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(out.landmarks.point(i).x, 9.0 - s.landmarks.point(i).x);
    EXPECT_EQ(out.landmarks.visible(i), s.landmarks.visible(i));
  }
}

TEST(Config, Validation) {
  EXPECT_NO_THROW(validate_augment(AugmentConfig{}));
  AugmentConfig c;
  c.flip_prob = 1.5;
  EXPECT_THROW(validate_augment(c), Error);
  c = {};
  c.photometric.contrast_low = 1.5;
  EXPECT_THROW(validate_augment(c), Error);
  c = {};
  c.coarse_dropout.max_holes = 0;
  EXPECT_THROW(validate_augment(c), Error);
  c = {};
  c.coarse_dropout.min_fraction = 0.2;
  EXPECT_THROW(validate_augment(c), Error);
}

}  // namespace
}  // namespace medpose
