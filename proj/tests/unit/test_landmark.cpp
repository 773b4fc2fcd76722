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

#include "medpose/error.hpp"
#include "medpose/landmark.hpp"

namespace medpose {
namespace {

ImageSpec spec_of(int w, int h, SpacingModel s = SpacingModel::pixel()) {
  ImageSpec spec;
  spec.path = "img.png";
  spec.width = w;
  spec.height = h;
  spec.spacing = s;
  return spec;
}

TEST(FullImageTransform, HalvesSquareImage) {
  const AffineTransform t = full_image_transform(spec_of(512, 512), 256, 256);
  EXPECT_DOUBLE_EQ(t.m[0], 0.5);
  EXPECT_DOUBLE_EQ(t.m[4], 0.5);
  EXPECT_DOUBLE_EQ(t.m[1], 0.0);
  EXPECT_DOUBLE_EQ(t.m[2], 0.0);
}

TEST(FullImageTransform, AnisotropicRatio) {
  const AffineTransform t = full_image_transform(spec_of(400, 300), 256, 256);
  EXPECT_DOUBLE_EQ(t.m[0], 0.64);
  EXPECT_DOUBLE_EQ(t.m[4], 256.0 / 300.0);
}

TEST(FullImageTransform, SameSizeIsIdentity) {
  const AffineTransform t = full_image_transform(spec_of(256, 256), 256, 256);
  const std::array<double, 6> id{1, 0, 0, 0, 1, 0};
  EXPECT_EQ(t.m, id);
}

TEST(ApplyTransform, IdentityKeepsSet) {
  const LandmarkSet s({{1.5, 2.5}, {3, 4}}, {true, false});
  EXPECT_EQ(apply_transform(full_image_transform(spec_of(10, 10), 10, 10), s), s);
}

TEST(ApplyTransform, ScalesPoints) {
  const AffineTransform t = full_image_transform(spec_of(200, 200), 100, 100);
  const LandmarkSet out = apply_transform(t, LandmarkSet({{100, 40}}));
  EXPECT_DOUBLE_EQ(out.point(0).x, 50.0);
  EXPECT_DOUBLE_EQ(out.point(0).y, 20.0);
  EXPECT_TRUE(out.visible(0));
}

TEST(ApplyTransform, OutOfTargetBecomesInvisible) {
  AffineTransform t = full_image_transform(spec_of(10, 10), 10, 10);
  t.m[2] = -2.0;  // shift left by two pixels
  const LandmarkSet out = apply_transform(t, LandmarkSet({{1, 5}, {5, 5}}));
  EXPECT_DOUBLE_EQ(out.point(0).x, -1.0);
  EXPECT_FALSE(out.visible(0));
  EXPECT_TRUE(out.visible(1));
}

TEST(InvertTransform, ScaleInverse) {
  const AffineTransform t = full_image_transform(spec_of(512, 512), 256, 256);
  const AffineTransform inv = invert_transform(t);
  EXPECT_DOUBLE_EQ(inv.m[0], 2.0);
  EXPECT_DOUBLE_EQ(inv.m[4], 2.0);
  EXPECT_EQ(inv.source, t.target);
  EXPECT_EQ(inv.target, t.source);
}

TEST(InvertTransform, SingularIsNumericError) {
  AffineTransform t;
  t.m = {1, 2, 0, 2, 4, 0};
  try {
    invert_transform(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

// Oracle: explicit 2x2 inverse by cofactors.
TEST(InvertTransform, RandomRoundTripAgainstCofactorOracle) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int trial = 0; trial < 200; ++trial) {
    AffineTransform t;
    for (auto& v : t.m) v = u(rng);
    const double det = t.m[0] * t.m[4] - t.m[1] * t.m[3];
    if (std::abs(det) < 0.1) continue;
    const AffineTransform inv = invert_transform(t);
    const double a = t.m[4] / det, b = -t.m[1] / det, c = -t.m[3] / det, d = t.m[0] / det;
    EXPECT_NEAR(inv.m[0], a, 1e-9);
    EXPECT_NEAR(inv.m[1], b, 1e-9);
    EXPECT_NEAR(inv.m[3], c, 1e-9);
    EXPECT_NEAR(inv.m[4], d, 1e-9);
    EXPECT_NEAR(inv.m[2], -(a * t.m[2] + b * t.m[5]), 1e-9);
    EXPECT_NEAR(inv.m[5], -(c * t.m[2] + d * t.m[5]), 1e-9);
    const AffineTransform id = compose(inv, t);
    EXPECT_NEAR(id.m[0], 1.0, 1e-9);
    EXPECT_NEAR(id.m[1], 0.0, 1e-9);
    EXPECT_NEAR(id.m[2], 0.0, 1e-9);
    EXPECT_NEAR(id.m[3], 0.0, 1e-9);
    EXPECT_NEAR(id.m[4], 1.0, 1e-9);
    EXPECT_NEAR(id.m[5], 0.0, 1e-9);
    const Point2 p{u(rng) * 10, u(rng) * 10};
    const Point2 q = inv.map(t.map(p));
    EXPECT_NEAR(q.x, p.x, 1e-6);
    EXPECT_NEAR(q.y, p.y, 1e-6);
  }
}

TEST(InvertTransform, RoundTripOfInBoundsPoints) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ux(0, 399.99), uy(0, 299.99);
  const AffineTransform t = full_image_transform(spec_of(400, 300), 64, 96);
  const AffineTransform inv = invert_transform(t);
  std::vector<Point2> pts;
  for (int i = 0; i < 100; ++i) pts.push_back({ux(rng), uy(rng)});
  const LandmarkSet back = apply_transform(inv, apply_transform(t, LandmarkSet(pts)));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_NEAR(back.point(i).x, pts[i].x, 1e-4);
    EXPECT_NEAR(back.point(i).y, pts[i].y, 1e-4);
    EXPECT_TRUE(back.visible(i));
  }
}

TEST(EffectiveSpacing, PhysicalPassesThrough) {
  const Spacing s = effective_spacing(spec_of(10, 10, SpacingModel::physical(0.1, 0.1)), LandmarkSet({{1, 1}}));
  EXPECT_FALSE(s.pixel_units);
  EXPECT_DOUBLE_EQ(s.sx, 0.1);
  EXPECT_DOUBLE_EQ(s.sy, 0.1);
}

TEST(EffectiveSpacing, WristRuleHalfMillimetre) {
  const LandmarkSet gt({{10, 20}, {110, 20}, {50, 50}});
  const Spacing s = effective_spacing(spec_of(200, 200, SpacingModel::landmark_normalized(0, 1, 50.0)), gt);
  EXPECT_DOUBLE_EQ(s.sx, 0.5);
  EXPECT_DOUBLE_EQ(s.sy, 0.5);
  EXPECT_FALSE(s.pixel_units);
}

TEST(EffectiveSpacing, PixelSentinel) {
  const Spacing s = effective_spacing(spec_of(10, 10), LandmarkSet({{1, 1}}));
  EXPECT_TRUE(s.pixel_units);
}

TEST(EffectiveSpacing, CoincidentRuleLandmarks) {
  const LandmarkSet gt({{10, 20}, {10, 20}});
  EXPECT_THROW(effective_spacing(spec_of(50, 50, SpacingModel::landmark_normalized(0, 1, 50.0)), gt), Error);
}

TEST(EffectiveSpacing, InvisibleRuleLandmark) {
  const LandmarkSet gt({{10, 20}, {30, 20}}, {true, false});
  EXPECT_THROW(effective_spacing(spec_of(50, 50, SpacingModel::landmark_normalized(0, 1, 50.0)), gt), Error);
}

// Scaling every coordinate by k scales the normalized spacing by 1/k, so the
// physical length of a fixed relative offset does not change.
TEST(EffectiveSpacing, ScaleConsistency) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(1, 40), uk(0.3, 4.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Point2 a{u(rng), u(rng)}, b{u(rng) + 41, u(rng)};
    const double k = uk(rng);
    const SpacingModel rule = SpacingModel::landmark_normalized(0, 1, 50.0);
    const Spacing s1 = effective_spacing(spec_of(400, 400, rule), LandmarkSet({a, b}));
    const Spacing s2 =
        effective_spacing(spec_of(400, 400, rule), LandmarkSet({{a.x * k, a.y * k}, {b.x * k, b.y * k}}));
    EXPECT_NEAR(s2.sx * k, s1.sx, 1e-12 * s1.sx);
    const double off = 3.7;
    EXPECT_NEAR(s1.sx * off, s2.sx * off * k, 1e-12);
  }
}

TEST(LandmarkSet, VisibilityLengthMismatch) {
  EXPECT_THROW(LandmarkSet({{1, 1}, {2, 2}}, {true}), Error);
}

}  // namespace
}  // namespace medpose
