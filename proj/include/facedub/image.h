// Copyright 2026 The facedub Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "facedub/tensor.h"

#include <filesystem>
#include <vector>

namespace facedub {

// Planar image, channel-major (c, y, x).
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
  bool operator==(const Image& o) const = default;
};

// (height*width) x channels, positions row-major; the layout the networks use.
nn::Matrix to_rows(const Image& img);
Image from_rows(const nn::Matrix& rows, int height, int width);

// Area-average downsampling by an integer factor.
Image downsample_area(const Image& img, int factor);
// Bilinear resampling to an arbitrary size (half-pixel centres).
Image resize_bilinear(const Image& img, int height, int width);

// Binary PPM (P6) for 3-channel images and PGM (P5) for 1-channel images,
// 8 bits per sample; values are clamped to [0,1] and rounded.
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);
// Rounds to the 8-bit grid that write_pnm stores.
Image quantize8(const Image& img);

}  // namespace facedub
