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

#include "medpose/metrics.hpp"

#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "medpose/error.hpp"
#include "medpose/io.hpp"

namespace medpose {

std::size_t RadialErrors::evaluated_count() const {
  std::size_t n = 0;
  for (bool e : evaluated) n += e ? 1 : 0;
  return n;
}

RadialErrors radial_errors(const LandmarkSet& pred, const LandmarkSet& gt, const Spacing& spacing) {
  if (pred.size() != gt.size()) {
    fail(ErrorKind::kValidation, fmt::format("radial_errors: {} predicted vs {} ground-truth landmarks",
                                             pred.size(), gt.size()));
  }
  RadialErrors out;
  out.unit = spacing.pixel_units ? Unit::kPx : Unit::kMm;
  out.images = 1;
  const double sx = spacing.pixel_units ? 1.0 : spacing.sx;
  const double sy = spacing.pixel_units ? 1.0 : spacing.sy;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool eval = gt.visible(i);
    double e = 0.0;
    if (eval) e = std::hypot(sx * (pred.point(i).x - gt.point(i).x), sy * (pred.point(i).y - gt.point(i).y));
    out.values.push_back(e);
    out.evaluated.push_back(eval);
  }
  return out;
}

void pool(RadialErrors& acc, const RadialErrors& more) {
  if (acc.images > 0 && acc.unit != more.unit) {
    fail(ErrorKind::kValidation, "cannot pool radial errors measured in different units");
  }
  if (acc.images == 0) acc.unit = more.unit;
  acc.values.insert(acc.values.end(), more.values.begin(), more.values.end());
  acc.evaluated.insert(acc.evaluated.end(), more.evaluated.begin(), more.evaluated.end());
  acc.images += more.images;
}

MreStats mre(const RadialErrors& errs) {
  const std::size_t n = errs.evaluated_count();
  if (n == 0) fail(ErrorKind::kValidation, "MRE of an empty evaluation set");
  double sum = 0.0;
  for (std::size_t i = 0; i < errs.values.size(); ++i) {
    if (errs.evaluated[i]) sum += errs.values[i];
  }
  const double mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (std::size_t i = 0; i < errs.values.size(); ++i) {
    if (errs.evaluated[i]) sq += (errs.values[i] - mean) * (errs.values[i] - mean);
  }
  return {mean, std::sqrt(sq / static_cast<double>(n))};
}

double sdr(const RadialErrors& errs, double threshold, Unit unit) {
  if (unit != errs.unit) {
    fail(ErrorKind::kValidation, fmt::format("SDR threshold in {} but errors are in {}", to_string(unit),
                                             to_string(errs.unit)));
  }
  if (!(threshold > 0.0)) fail(ErrorKind::kConfig, "SDR threshold must be positive");
  const std::size_t n = errs.evaluated_count();
  if (n == 0) fail(ErrorKind::kValidation, "SDR of an empty evaluation set");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < errs.values.size(); ++i) {
    if (errs.evaluated[i] && errs.values[i] <= threshold) ++hit;
  }
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

double sdr_avg(std::span<const double> sdrs) {
  if (sdrs.empty()) fail(ErrorKind::kValidation, "SDR_avg of an empty list");
  double sum = 0.0;
  for (double s : sdrs) sum += s;
  return sum / static_cast<double>(sdrs.size());
}

MetricsReport make_report(const std::string& dataset, const RadialErrors& errs,
                          std::span<const double> thresholds) {
  MetricsReport r;
  r.dataset = dataset;
  r.unit = errs.unit;
  r.mre = mre(errs);
  std::vector<double> values;
  for (double t : thresholds) {
    values.push_back(sdr(errs, t, errs.unit));
    r.sdr.push_back({t, values.back()});
  }
  r.sdr_avg = sdr_avg(values);
  r.n_images = errs.images;
  r.n_landmarks = errs.evaluated_count();
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json sdrs = nlohmann::json::array();
  for (const auto& s : r.sdr) sdrs.push_back({{"threshold", s.threshold}, {"value", s.value}});
  return {{"dataset", r.dataset},
          {"unit", to_string(r.unit)},
          {"mre", {{"mean", r.mre.mean}, {"std", r.mre.std}}},
          {"sdr", sdrs},
          {"sdr_avg", r.sdr_avg},
          {"n_images", r.n_images},
          {"n_landmarks", r.n_landmarks}};
}

MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.dataset = j.at("dataset").get<std::string>();
    const std::string unit = j.at("unit").get<std::string>();
    if (unit != "mm" && unit != "px") fail(ErrorKind::kParse, "report unit must be mm or px");
    r.unit = unit == "mm" ? Unit::kMm : Unit::kPx;
    r.mre.mean = j.at("mre").at("mean").get<double>();
    r.mre.std = j.at("mre").at("std").get<double>();
    for (const auto& s : j.at("sdr")) r.sdr.push_back({s.at("threshold").get<double>(), s.at("value").get<double>()});
    r.sdr_avg = j.at("sdr_avg").get<double>();
    r.n_images = j.at("n_images").get<std::size_t>();
    r.n_landmarks = j.at("n_landmarks").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kParse, std::string("malformed report: ") + e.what());
  }
}

namespace {

std::string threshold_label(double t, Unit unit) {
  return fmt::format("{:g} {}", t, to_string(unit));
}

}  // namespace

std::string format_report(const MetricsReport& r, ReportFormat format) {
  switch (format) {
    case ReportFormat::kJson:
      return report_to_json(r).dump(2) + "\n";
    case ReportFormat::kCsv: {
      std::string head = "dataset,unit,n_images,n_landmarks,mre_mean,mre_std";
      std::string row = fmt::format("{},{},{},{},{:.6f},{:.6f}", r.dataset, to_string(r.unit), r.n_images,
                                    r.n_landmarks, r.mre.mean, r.mre.std);
      for (const auto& s : r.sdr) {
        head += fmt::format(",sdr_{:g}", s.threshold);
        row += fmt::format(",{:.4f}", s.value);
      }
      head += ",sdr_avg\n";
      row += fmt::format(",{:.4f}\n", r.sdr_avg);
      return head + row;
    }
    case ReportFormat::kText: {
      std::vector<std::string> head;
      std::vector<std::string> row;
      for (const auto& s : r.sdr) {
        head.push_back(threshold_label(s.threshold, r.unit));
        row.push_back(fmt::format("{:.2f}", s.value));
      }
      head.push_back("SDR_avg");
      row.push_back(fmt::format("{:.2f}", r.sdr_avg));
      head.push_back(fmt::format("MRE({})", to_string(r.unit)));
      row.push_back(fmt::format("{:.3f} ± {:.3f}", r.mre.mean, r.mre.std));
      std::string out = fmt::format("dataset: {} ({} images, {} landmarks)\n", r.dataset, r.n_images,
                                    r.n_landmarks);
      out += fmt::format("{}\n", fmt::join(head, " | "));
      out += fmt::format("{}\n", fmt::join(row, " | "));
      return out;
    }
  }
  return {};
}

void emit_report(const MetricsReport& r, const std::filesystem::path& path, ReportFormat format) {
  write_file_atomic(path, format_report(r, format));
}

}  // namespace medpose
