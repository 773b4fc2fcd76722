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

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "medpose/landmark.hpp"

namespace medpose {

enum class Unit { kMm, kPx };

const char* to_string(Unit unit) noexcept;

struct ManifestEntry {
  ImageSpec image;
  LandmarkSet landmarks;
  std::string patient_id;
};

/// A harmonized landmark dataset: images, N landmarks each, spacing rules,
/// flip correspondences and the SDR thresholds it is evaluated at.
struct DatasetManifest {
  std::string name;
  std::size_t landmark_count = 0;
  std::vector<ManifestEntry> images;
  std::vector<std::pair<std::size_t, std::size_t>> flip_pairs;
  Unit threshold_unit = Unit::kMm;
  std::vector<double> sdr_thresholds;
  /// Relative image paths resolve against this directory.
  std::filesystem::path base_dir;

  std::filesystem::path image_path(std::size_t index) const;
};

/// Checks every manifest invariant; throws kValidation naming the first
/// violation (and image index where applicable).
void validate_manifest(const DatasetManifest& manifest);

DatasetManifest parse_manifest(std::string_view json_text, std::filesystem::path base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);

std::string manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace medpose
