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
#include <vector>

namespace medpose {

/// Single-channel image with intensities normalized to [0, 1], row-major.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, float fill = 0.0f)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  float mean() const;

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  const Rgb& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Reads 8- or 16-bit PNG; color inputs are converted to luminance.
GrayImage read_png(const std::filesystem::path& path);
void write_png_gray8(const std::filesystem::path& path, const GrayImage& image);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

/// Bilinear resample onto (out_w, out_h) under x' = x * out_w / w. Output pixel
/// centers map back to (x' * w / out_w); samples clamp at the border.
GrayImage resize_bilinear(const GrayImage& image, int out_width, int out_height);

RgbImage to_rgb(const GrayImage& image);

/// Filled disk of the given radius (pixels) centered at (cx, cy), clipped to the image.
void draw_disk(RgbImage& image, double cx, double cy, double radius, Rgb color);

}  // namespace medpose
