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

#include "medpose/landmark.hpp"

#include <cmath>
#include <string>

#include "medpose/error.hpp"

namespace medpose {

SpacingModel SpacingModel::physical(double sx, double sy) {
  SpacingModel s;
  s.mode = SpacingMode::kPhysical;
  s.mm_per_px = {sx, sy};
  return s;
}

SpacingModel SpacingModel::landmark_normalized(std::size_t a, std::size_t b, double distance_mm) {
  SpacingModel s;
  s.mode = SpacingMode::kLandmarkNormalized;
  s.landmark_a = a;
  s.landmark_b = b;
  s.distance_mm = distance_mm;
  return s;
}

SpacingModel SpacingModel::pixel() { return SpacingModel{}; }

LandmarkSet::LandmarkSet(std::vector<Point2> points)
    : points_(std::move(points)), visibility_(points_.size(), true) {}

LandmarkSet::LandmarkSet(std::vector<Point2> points, std::vector<bool> visibility)
    : points_(std::move(points)), visibility_(std::move(visibility)) {
  if (points_.size() != visibility_.size()) {
    fail(ErrorKind::kValidation, "landmark set has " + std::to_string(points_.size()) +
                                     " points but " + std::to_string(visibility_.size()) +
                                     " visibility flags");
  }
}

AffineTransform full_image_transform(const ImageSpec& spec, int input_height, int input_width) {
  if (input_height < 1 || input_width < 1) {
    fail(ErrorKind::kConfig, "model input size must be at least 1x1");
  }
  if (spec.width < 1 || spec.height < 1) {
    fail(ErrorKind::kValidation, "image size must be at least 1x1", spec.path);
  }
  AffineTransform t;
  t.m = {static_cast<double>(input_width) / spec.width, 0.0, 0.0,
         0.0, static_cast<double>(input_height) / spec.height, 0.0};
  t.source = {static_cast<double>(spec.width), static_cast<double>(spec.height)};
  t.target = {static_cast<double>(input_width), static_cast<double>(input_height)};
  return t;
}

LandmarkSet apply_transform(const AffineTransform& t, const LandmarkSet& pts) {
  std::vector<Point2> out(pts.size());
  std::vector<bool> vis(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (!pts.visible(i)) {
      out[i] = pts.point(i);
      vis[i] = false;
      continue;
    }
    const Point2 q = t.map(pts.point(i));
    out[i] = q;
    vis[i] = q.x >= 0.0 && q.y >= 0.0 && q.x < t.target.width && q.y < t.target.height;
  }
  return LandmarkSet(std::move(out), std::move(vis));
}

AffineTransform invert_transform(const AffineTransform& t) {
  const double det = t.determinant();
  if (det == 0.0 || !std::isfinite(det)) {
    fail(ErrorKind::kNumeric, "affine transform is singular");
  }
  const auto& m = t.m;
  const double ia = m[4] / det;
  const double ib = -m[1] / det;
  const double ic = -m[3] / det;
  const double id = m[0] / det;
  AffineTransform inv;
  inv.m = {ia, ib, -(ia * m[2] + ib * m[5]), ic, id, -(ic * m[2] + id * m[5])};
  inv.source = t.target;
  inv.target = t.source;
  return inv;
}

AffineTransform compose(const AffineTransform& outer, const AffineTransform& inner) {
  const auto& a = outer.m;
  const auto& b = inner.m;
  AffineTransform out;
  out.m = {a[0] * b[0] + a[1] * b[3], a[0] * b[1] + a[1] * b[4], a[0] * b[2] + a[1] * b[5] + a[2],
           a[3] * b[0] + a[4] * b[3], a[3] * b[1] + a[4] * b[4], a[3] * b[2] + a[4] * b[5] + a[5]};
  out.source = inner.source;
  out.target = outer.target;
  return out;
}

Spacing effective_spacing(const ImageSpec& spec, const LandmarkSet& gt) {
  const SpacingModel& s = spec.spacing;
  switch (s.mode) {
    case SpacingMode::kPhysical:
      return Spacing::mm(s.mm_per_px[0], s.mm_per_px[1]);
    case SpacingMode::kPixel:
      return Spacing::pixels();
    case SpacingMode::kLandmarkNormalized: {
      if (s.landmark_a >= gt.size() || s.landmark_b >= gt.size()) {
        fail(ErrorKind::kValidation, "normalization landmark index out of range", spec.path);
      }
      if (!gt.visible(s.landmark_a) || !gt.visible(s.landmark_b)) {
        fail(ErrorKind::kValidation, "normalization landmark is not visible", spec.path);
      }
      const Point2 a = gt.point(s.landmark_a);
      const Point2 b = gt.point(s.landmark_b);
      const double dist = std::hypot(a.x - b.x, a.y - b.y);
      if (dist == 0.0) {
        fail(ErrorKind::kValidation, "normalization landmarks coincide", spec.path);
      }
      const double mm = s.distance_mm / dist;
      return Spacing::mm(mm, mm);
    }
  }
  return Spacing::pixels();
}

}  // namespace medpose
