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

#include "medpose/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "medpose/error.hpp"

namespace medpose {

namespace {

constexpr double kSigmas[] = {1.0, 1.5, 2.0};
constexpr double kBlobRadius = 2.5 * 2.0;        // 2.5 sigma of the widest blob
constexpr int kMargin = 6;                       // ceil(kBlobRadius) + 1
constexpr double kMinSeparation = 2.0 * kBlobRadius;

int grid_side(int landmarks) {
  return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(landmarks))));
}

double blob_sigma(int index) { return kSigmas[index % 3]; }

double blob_amplitude(int index, int count) {
  return count == 1 ? 0.8 : 0.4 + 0.55 * index / (count - 1);
}

}  // namespace

int synth_min_size(int landmarks) {
  // Points are jittered inside the central half of distinct grid cells, so two
  // points are at least half a cell apart.
  return 2 * kMargin + grid_side(landmarks) * static_cast<int>(std::ceil(2.0 * kMinSeparation));
}

SynthDataset synth_generate(const SynthOptions& opt) {
  if (opt.count < 1) fail(ErrorKind::kConfig, "synthetic image count must be at least 1");
  if (opt.landmarks < 1) fail(ErrorKind::kConfig, "synthetic landmark count must be at least 1");
  if (opt.patients < 0) fail(ErrorKind::kConfig, "patient count must be non-negative");
  const int min_size = synth_min_size(opt.landmarks);
  if (opt.width < min_size || opt.height < min_size) {
    fail(ErrorKind::kConfig,
         fmt::format("{} landmarks need an image of at least {}x{} pixels, got {}x{}",
                     opt.landmarks, min_size, min_size, opt.width, opt.height));
  }

  std::mt19937_64 rng(opt.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int g = grid_side(opt.landmarks);
  const double cell_w = static_cast<double>(opt.width - 2 * kMargin) / g;
  const double cell_h = static_cast<double>(opt.height - 2 * kMargin) / g;
  const int patients = opt.patients == 0 ? opt.count : opt.patients;

  SynthDataset out;
  DatasetManifest& m = out.manifest;
  m.name = opt.name;
  m.landmark_count = static_cast<std::size_t>(opt.landmarks);
  m.threshold_unit = Unit::kMm;
  m.sdr_thresholds = {2.0, 4.0, 10.0};

  std::vector<int> cells(static_cast<std::size_t>(g * g));
  for (int k = 0; k < opt.count; ++k) {
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng);

    std::vector<Point2> pts;
    for (int i = 0; i < opt.landmarks; ++i) {
      const int cell = cells[static_cast<std::size_t>(i)];
      const double x0 = kMargin + (cell % g) * cell_w;
      const double y0 = kMargin + (cell / g) * cell_h;
      pts.push_back({x0 + cell_w * (0.25 + 0.5 * unit(rng)), y0 + cell_h * (0.25 + 0.5 * unit(rng))});
    }

    GrayImage img(opt.width, opt.height);
    const double gx = 0.1 * unit(rng);
    const double gy = 0.1 * unit(rng);
    for (int y = 0; y < opt.height; ++y) {
      for (int x = 0; x < opt.width; ++x) {
        const double bg = 0.08 + gx * x / opt.width + gy * y / opt.height + 0.04 * unit(rng);
        img.at(x, y) = static_cast<float>(bg);
      }
    }
    for (int i = 0; i < opt.landmarks; ++i) {
      const double s = blob_sigma(i);
      const double a = blob_amplitude(i, opt.landmarks);
      const Point2 c = pts[static_cast<std::size_t>(i)];
      const int r = static_cast<int>(std::ceil(3.0 * s));
      for (int y = std::max(0, static_cast<int>(c.y) - r);
           y <= std::min(opt.height - 1, static_cast<int>(c.y) + r + 1); ++y) {
        for (int x = std::max(0, static_cast<int>(c.x) - r);
             x <= std::min(opt.width - 1, static_cast<int>(c.x) + r + 1); ++x) {
          const double d2 = (x - c.x) * (x - c.x) + (y - c.y) * (y - c.y);
          img.at(x, y) = std::min(1.0f, img.at(x, y) + static_cast<float>(a * std::exp(-d2 / (2 * s * s))));
        }
      }
    }

    for (float& v : img.pixels) v = std::round(v * 255.0f) / 255.0f;

    ManifestEntry e;
    e.image.path = fmt::format("img_{:04d}.png", k);
    e.image.width = opt.width;
    e.image.height = opt.height;
    e.image.spacing = SpacingModel::physical(1.0, 1.0);
    e.landmarks = LandmarkSet(std::move(pts));
    e.patient_id = fmt::format("p{:03d}", k % patients);
    m.images.push_back(std::move(e));
    out.images.push_back(std::move(img));
  }
  validate_manifest(m);
  return out;
}

void write_synth_dataset(const SynthDataset& dataset, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  for (std::size_t k = 0; k < dataset.images.size(); ++k) {
    write_png_gray8(out_dir / dataset.manifest.images[k].image.path, dataset.images[k]);
  }
  DatasetManifest m = dataset.manifest;
  m.base_dir = out_dir;
  save_manifest(m, out_dir / "manifest.json");
}

}  // namespace medpose
