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

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace medpose {

/// Continuous image coordinate. Pixel centers sit at integer positions,
/// origin top-left, x to the right and y downward.
struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

enum class SpacingMode { kPhysical, kLandmarkNormalized, kPixel };

/// How pixel distances convert to millimetres for one image.
struct SpacingModel {
  SpacingMode mode = SpacingMode::kPixel;
  std::array<double, 2> mm_per_px{1.0, 1.0};  // kPhysical
  std::size_t landmark_a = 0;                 // kLandmarkNormalized
  std::size_t landmark_b = 0;
  double distance_mm = 0.0;

  static SpacingModel physical(double sx, double sy);
  static SpacingModel landmark_normalized(std::size_t a, std::size_t b, double distance_mm);
  static SpacingModel pixel();

  friend bool operator==(const SpacingModel&, const SpacingModel&) = default;
};

struct ImageSpec {
  std::string path;
  int width = 1;
  int height = 1;
  SpacingModel spacing;
};

class LandmarkSet {
 public:
  LandmarkSet() = default;
  /// All points visible.
  explicit LandmarkSet(std::vector<Point2> points);
  LandmarkSet(std::vector<Point2> points, std::vector<bool> visibility);

  std::size_t size() const noexcept { return points_.size(); }
  const std::vector<Point2>& points() const noexcept { return points_; }
  const std::vector<bool>& visibility() const noexcept { return visibility_; }
  const Point2& point(std::size_t i) const { return points_.at(i); }
  bool visible(std::size_t i) const { return visibility_.at(i); }

  void set_point(std::size_t i, Point2 p) { points_.at(i) = p; }
  void set_visible(std::size_t i, bool v) { visibility_.at(i) = v; }

  friend bool operator==(const LandmarkSet&, const LandmarkSet&) = default;

 private:
  std::vector<Point2> points_;
  std::vector<bool> visibility_;
};

struct Extent {
  double width = 0.0;
  double height = 0.0;
  friend bool operator==(const Extent&, const Extent&) = default;
};

/// 2x3 affine map [a b tx; c d ty] from a source rectangle onto a target rectangle.
struct AffineTransform {
  std::array<double, 6> m{1, 0, 0, 0, 1, 0};
  Extent source;
  Extent target;

  Point2 map(Point2 p) const noexcept {
    return {m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5]};
  }
  double determinant() const noexcept { return m[0] * m[4] - m[1] * m[3]; }
};

/// Anisotropic scale of the full image onto the (height, width) model input.
AffineTransform full_image_transform(const ImageSpec& spec, int input_height, int input_width);

/// Maps visible points; results outside the target rectangle become invisible.
LandmarkSet apply_transform(const AffineTransform& t, const LandmarkSet& pts);

/// Throws kNumeric when the linear part is singular.
AffineTransform invert_transform(const AffineTransform& t);

AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner);

/// Resolved mm-per-pixel pair, or the pixel-unit sentinel.
struct Spacing {
  double sx = 1.0;
  double sy = 1.0;
  bool pixel_units = true;

  static Spacing pixels() { return {}; }
  static Spacing mm(double sx, double sy) { return {sx, sy, false}; }
};

Spacing effective_spacing(const ImageSpec& spec, const LandmarkSet& gt);

}  // namespace medpose
