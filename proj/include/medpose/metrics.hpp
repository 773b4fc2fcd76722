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

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "medpose/landmark.hpp"
#include "medpose/manifest.hpp"

namespace medpose {

/// Per-landmark radial errors pooled over one or more images. Only landmarks
/// visible in the ground truth are evaluated.
struct RadialErrors {
  Unit unit = Unit::kMm;
  std::vector<double> values;
  std::vector<bool> evaluated;
  std::size_t images = 0;

  std::size_t evaluated_count() const;
};

/// sqrt((sx dx)^2 + (sy dy)^2) in mm, or sqrt(dx^2 + dy^2) in px.
RadialErrors radial_errors(const LandmarkSet& pred, const LandmarkSet& gt, const Spacing& spacing);

/// Appends `more` to `acc`; units must agree.
void pool(RadialErrors& acc, const RadialErrors& more);

struct MreStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

MreStats mre(const RadialErrors& errs);

/// 100 * |{e <= threshold}| / |evaluated|.
double sdr(const RadialErrors& errs, double threshold, Unit unit);

double sdr_avg(std::span<const double> sdrs);

struct SdrEntry {
  double threshold = 0.0;
  double value = 0.0;
  friend bool operator==(const SdrEntry&, const SdrEntry&) = default;
};

struct MetricsReport {
  std::string dataset;
  Unit unit = Unit::kMm;
  MreStats mre;
  std::vector<SdrEntry> sdr;
  double sdr_avg = 0.0;
  std::size_t n_images = 0;
  std::size_t n_landmarks = 0;
};

MetricsReport make_report(const std::string& dataset, const RadialErrors& errs,
                          std::span<const double> thresholds);

enum class ReportFormat { kJson, kCsv, kText };

nlohmann::json report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const nlohmann::json& j);

/// Deterministic serialization. The text table has one column per threshold
/// ("2 mm | 3 mm | ..."), then SDR_avg and MRE, with 2-decimal SDR and
/// 3-decimal MRE.
std::string format_report(const MetricsReport& r, ReportFormat format);

void emit_report(const MetricsReport& r, const std::filesystem::path& path, ReportFormat format);

}  // namespace medpose
