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

#include "medpose/manifest.hpp"

#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "medpose/error.hpp"
#include "medpose/io.hpp"

namespace medpose {

using nlohmann::json;

namespace {

std::string at_image(std::size_t index) { return "image " + std::to_string(index) + ": "; }

SpacingModel parse_spacing(const json& j) {
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "physical") {
    const auto mm = j.at("mm_per_px").get<std::vector<double>>();
    if (mm.size() != 2) fail(ErrorKind::kParse, "mm_per_px must have two entries");
    return SpacingModel::physical(mm[0], mm[1]);
  }
  if (mode == "landmark_normalized") {
    return SpacingModel::landmark_normalized(j.at("a").get<std::size_t>(),
                                             j.at("b").get<std::size_t>(),
                                             j.at("distance_mm").get<double>());
  }
  if (mode == "pixel") return SpacingModel::pixel();
  fail(ErrorKind::kParse, "unknown spacing mode '" + mode + "'");
}

json spacing_json(const SpacingModel& s) {
  switch (s.mode) {
    case SpacingMode::kPhysical:
      return {{"mode", "physical"}, {"mm_per_px", {s.mm_per_px[0], s.mm_per_px[1]}}};
    case SpacingMode::kLandmarkNormalized:
      return {{"mode", "landmark_normalized"},
              {"a", s.landmark_a},
              {"b", s.landmark_b},
              {"distance_mm", s.distance_mm}};
    case SpacingMode::kPixel:
      break;
  }
  return {{"mode", "pixel"}};
}

void validate_spacing(const SpacingModel& s, std::size_t n, std::size_t index) {
  switch (s.mode) {
    case SpacingMode::kPhysical:
      if (!(s.mm_per_px[0] > 0.0) || !(s.mm_per_px[1] > 0.0)) {
        fail(ErrorKind::kValidation, at_image(index) + "physical spacing must be positive");
      }
      break;
    case SpacingMode::kLandmarkNormalized:
      if (s.landmark_a == s.landmark_b) {
        fail(ErrorKind::kValidation, at_image(index) + "normalization landmarks must differ");
      }
      if (s.landmark_a >= n || s.landmark_b >= n) {
        fail(ErrorKind::kValidation, at_image(index) + "normalization landmark out of range");
      }
      if (!(s.distance_mm > 0.0)) {
        fail(ErrorKind::kValidation, at_image(index) + "normalization distance must be positive");
      }
      break;
    case SpacingMode::kPixel:
      break;
  }
}

}  // namespace

const char* to_string(Unit unit) noexcept { return unit == Unit::kMm ? "mm" : "px"; }

std::filesystem::path DatasetManifest::image_path(std::size_t index) const {
  const std::filesystem::path p = images.at(index).image.path;
  return p.is_absolute() ? p : base_dir / p;
}

void validate_manifest(const DatasetManifest& m) {
  if (m.name.empty()) fail(ErrorKind::kValidation, "manifest name is empty");
  for (char c : m.name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) {
      fail(ErrorKind::kValidation, "manifest name '" + m.name + "' may only contain [A-Za-z0-9_-]");
    }
  }
  const std::size_t n = m.landmark_count;
  if (n < 1) fail(ErrorKind::kValidation, "landmark_count must be at least 1");

  if (m.sdr_thresholds.empty()) fail(ErrorKind::kValidation, "sdr_thresholds is empty");
  for (std::size_t i = 0; i < m.sdr_thresholds.size(); ++i) {
    if (!(m.sdr_thresholds[i] > 0.0)) {
      fail(ErrorKind::kValidation, "sdr_thresholds must be positive");
    }
    if (i > 0 && !(m.sdr_thresholds[i] > m.sdr_thresholds[i - 1])) {
      fail(ErrorKind::kValidation, "sdr_thresholds must be strictly increasing");
    }
  }

  std::set<std::size_t> seen;
  for (const auto& [a, b] : m.flip_pairs) {
    if (a >= n || b >= n) fail(ErrorKind::kValidation, "flip pair index out of range");
    if (a == b || !seen.insert(a).second || !seen.insert(b).second) {
      fail(ErrorKind::kValidation, "flip pair index " + std::to_string(seen.count(a) ? a : b) +
                                       " appears more than once");
    }
  }

  for (std::size_t i = 0; i < m.images.size(); ++i) {
    const ManifestEntry& e = m.images[i];
    if (e.image.width < 1 || e.image.height < 1) {
      fail(ErrorKind::kValidation, at_image(i) + "width and height must be at least 1");
    }
    if (e.patient_id.empty()) fail(ErrorKind::kValidation, at_image(i) + "patient_id is empty");
    validate_spacing(e.image.spacing, n, i);
    const bool pixel_mode = e.image.spacing.mode == SpacingMode::kPixel;
    if (pixel_mode != (m.threshold_unit == Unit::kPx)) {
      fail(ErrorKind::kValidation,
           at_image(i) + "spacing unit is inconsistent with threshold unit '" +
               to_string(m.threshold_unit) + "'");
    }
    if (e.landmarks.size() != n) {
      fail(ErrorKind::kValidation, at_image(i) + "expected " + std::to_string(n) +
                                       " landmarks, got " + std::to_string(e.landmarks.size()));
    }
    for (std::size_t k = 0; k < n; ++k) {
      if (!e.landmarks.visible(k)) continue;
      const Point2 p = e.landmarks.point(k);
      if (!(p.x >= 0.0 && p.y >= 0.0 && p.x < e.image.width && p.y < e.image.height)) {
        fail(ErrorKind::kValidation,
             at_image(i) + "visible landmark " + std::to_string(k) + " lies outside the image");
      }
    }
  }
}

DatasetManifest parse_manifest(std::string_view json_text, std::filesystem::path base_dir) {
  DatasetManifest m;
  m.base_dir = std::move(base_dir);
  try {
    const json j = json::parse(json_text);
    m.name = j.at("name").get<std::string>();
    m.landmark_count = j.at("landmark_count").get<std::size_t>();
    const json& thr = j.at("sdr_thresholds");
    const std::string unit = thr.at("unit").get<std::string>();
    if (unit == "mm") {
      m.threshold_unit = Unit::kMm;
    } else if (unit == "px") {
      m.threshold_unit = Unit::kPx;
    } else {
      fail(ErrorKind::kParse, "unknown threshold unit '" + unit + "'");
    }
    m.sdr_thresholds = thr.at("values").get<std::vector<double>>();
    if (j.contains("flip_pairs")) {
      for (const json& pair : j.at("flip_pairs")) {
        const auto ab = pair.get<std::vector<std::size_t>>();
        if (ab.size() != 2) fail(ErrorKind::kParse, "flip pair must have two indices");
        m.flip_pairs.emplace_back(ab[0], ab[1]);
      }
    }
    const json& images = j.at("images");
    m.images.reserve(images.size());
    for (const json& im : images) {
      ManifestEntry e;
      e.image.path = im.at("path").get<std::string>();
      e.image.width = im.at("width").get<int>();
      e.image.height = im.at("height").get<int>();
      e.image.spacing = parse_spacing(im.at("spacing"));
      e.patient_id = im.contains("patient_id") ? im.at("patient_id").get<std::string>()
                                               : e.image.path;
      std::vector<Point2> pts;
      for (const json& xy : im.at("landmarks")) {
        const auto v = xy.get<std::vector<double>>();
        if (v.size() != 2) fail(ErrorKind::kParse, "landmark must be an [x, y] pair");
        pts.push_back({v[0], v[1]});
      }
      std::vector<bool> vis = im.contains("visibility") ? im.at("visibility").get<std::vector<bool>>()
                                                        : std::vector<bool>(pts.size(), true);
      if (vis.size() != pts.size()) {
        fail(ErrorKind::kValidation, at_image(m.images.size()) + "visibility has " +
                                         std::to_string(vis.size()) + " entries for " +
                                         std::to_string(pts.size()) + " landmarks");
      }
      e.landmarks = LandmarkSet(std::move(pts), std::move(vis));
      m.images.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    fail(ErrorKind::kParse, std::string("malformed manifest: ") + ex.what());
  }
  validate_manifest(m);
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return parse_manifest(text, path.parent_path());
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.what(), path.string());
  }
}

std::string manifest_to_json(const DatasetManifest& m) {
  json images = json::array();
  for (const ManifestEntry& e : m.images) {
    json pts = json::array();
    for (const Point2& p : e.landmarks.points()) pts.push_back({p.x, p.y});
    images.push_back({{"path", e.image.path},
                      {"width", e.image.width},
                      {"height", e.image.height},
                      {"patient_id", e.patient_id},
                      {"spacing", spacing_json(e.image.spacing)},
                      {"landmarks", std::move(pts)},
                      {"visibility", e.landmarks.visibility()}});
  }
  json pairs = json::array();
  for (const auto& [a, b] : m.flip_pairs) pairs.push_back({a, b});
  const json j = {{"name", m.name},
                  {"landmark_count", m.landmark_count},
                  {"sdr_thresholds",
                   {{"unit", to_string(m.threshold_unit)}, {"values", m.sdr_thresholds}}},
                  {"flip_pairs", std::move(pairs)},
                  {"images", std::move(images)}};
  return j.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  write_file_atomic(path, manifest_to_json(manifest));
}

}  // namespace medpose
