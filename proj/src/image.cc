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

#include "facedub/image.h"

#include "facedub/errors.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace facedub {

nn::Matrix to_rows(const Image& img) {
  nn::Matrix m(static_cast<nn::Index>(img.height) * img.width, img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) m(y * img.width + x, c) = img.at(c, y, x);
    }
  }
  return m;
}

Image from_rows(const nn::Matrix& rows, int height, int width) {
  if (rows.rows() != static_cast<nn::Index>(height) * width) {
    throw std::invalid_argument("from_rows: row count does not match size");
  }
  Image img(static_cast<int>(rows.cols()), height, width);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) img.at(c, y, x) = rows(y * width + x, c);
    }
  }
  return img;
}

Image downsample_area(const Image& img, int factor) {
  if (factor <= 0 || img.height % factor != 0 || img.width % factor != 0) {
    throw std::invalid_argument("downsample_area: size not divisible by factor");
  }
  Image out(img.channels, img.height / factor, img.width / factor);
  const double inv = 1.0 / (factor * factor);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        double acc = 0;
        for (int dy = 0; dy < factor; ++dy) {
          for (int dx = 0; dx < factor; ++dx) {
            acc += img.at(c, y * factor + dy, x * factor + dx);
          }
        }
        out.at(c, y, x) = acc * inv;
      }
    }
  }
  return out;
}

Image resize_bilinear(const Image& img, int height, int width) {
  Image out(img.channels, height, width);
  const double sy = static_cast<double>(img.height) / height;
  const double sx = static_cast<double>(img.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < img.channels; ++c) {
        out.at(c, y, x) = (1 - wy) * ((1 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1)) +
                          wy * ((1 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1));
      }
    }
  }
  return out;
}

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pnm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw std::invalid_argument("write_pnm: need 1 or 3 channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << "\n"
      << img.width << " " << img.height << "\n255\n";
  std::string buf(static_cast<std::size_t>(img.width) * img.height * img.channels, '\0');
  std::size_t i = 0;
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        buf[i++] = static_cast<char>(to_byte(img.at(c, y, x)));
      }
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (!in || (magic != "P6" && magic != "P5") || w <= 0 || h <= 0 || maxval != 255) {
    throw DataError("unsupported image file: " + path.string());
  }
  const int channels = magic == "P6" ? 3 : 1;
  std::string buf(static_cast<std::size_t>(w) * h * channels, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!in) throw DataError("truncated image file: " + path.string());
  Image img(channels, h, w);
  std::size_t i = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = static_cast<unsigned char>(buf[i++]) / 255.0;
      }
    }
  }
  return img;
}

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace facedub
