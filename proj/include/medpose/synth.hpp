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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "medpose/image.hpp"
#include "medpose/manifest.hpp"

namespace medpose {

struct SynthOptions {
  std::uint64_t seed = 0;
  int count = 1;
  int landmarks = 1;
  int height = 64;
  int width = 64;
  /// Distinct patient ids; images are assigned round-robin. 0 means one patient per image.
  int patients = 0;
  std::string name = "synth";
};

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<GrayImage> images;
};

/// Smallest square side that fits `landmarks` separated blobs.
int synth_min_size(int landmarks);

/// Deterministic X-ray-like fixture: landmark i is a Gaussian blob whose width
/// and brightness identify its index, placed at a sub-pixel location on a noisy
/// background. Spacing is physical 1.0 mm/px.
SynthDataset synth_generate(const SynthOptions& options);

/// Writes img_XXXX.png files and manifest.json into `out_dir`.
void write_synth_dataset(const SynthDataset& dataset, const std::filesystem::path& out_dir);

}  // namespace medpose
