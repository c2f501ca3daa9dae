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

// Linear morphable face model: vertices = mean + shape_basis * alpha +
// expr_basis * beta, posed by a weak-perspective camera and rasterised to
// projected normalised coordinate code (PNCC) maps.
//
// Coordinate conventions: x right, y down, z away from the camera (the
// smallest z is nearest). Image points are in pixels; the pixel (row i,
// column j) has its centre at (j + 0.5, i + 0.5).

#include "facedub/image.h"
#include "facedub/tensor.h"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace facedub {

using Eigen::Matrix3d;
using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

struct PoseParams {
  Vector3d rotation = Vector3d::Zero();     // Euler angles (x, y, z), radians
  Vector3d translation = Vector3d::Zero();  // canonical units
  double scale = 1.0;                       // pixels per canonical unit

  static constexpr int kSize = 7;
  // (rx, ry, rz, tx, ty, tz, scale)
  Eigen::Matrix<double, kSize, 1> as_vector() const;
  static PoseParams from_vector(const Eigen::Matrix<double, kSize, 1>& v);
  void validate() const;
  bool operator==(const PoseParams&) const = default;
};

// R = Rz * Ry * Rx.
Matrix3d rotation_matrix(const Vector3d& angles);
// Partial derivatives of rotation_matrix with respect to each angle.
std::array<Matrix3d, 3> rotation_matrix_derivatives(const Vector3d& angles);

struct Vertices {
  nn::Matrix coords;  // L x 3

  Vertices() = default;
  explicit Vertices(nn::Matrix c) : coords(std::move(c)) {}
  int size() const { return static_cast<int>(coords.rows()); }
  bool operator==(const Vertices& o) const { return coords == o.coords; }
};

struct PnccMap {
  Image image;  // 3 x H x W, values in [0,1], background exactly 0
};

struct MorphableModel {
  VectorXd mean_shape;    // 3L, interleaved (x0, y0, z0, x1, ...)
  MatrixXd shape_basis;   // 3L x n_alpha
  MatrixXd expr_basis;    // 3L x n_beta
  std::vector<std::array<int, 3>> topology;
  std::vector<int> landmark_indices;
  std::vector<int> lower_face_indices;
  std::vector<int> upper_face_indices;
  std::vector<int> lip_region_indices;
  std::pair<int, int> inner_lip_pair{0, 0};

  int num_vertices() const { return static_cast<int>(mean_shape.size() / 3); }
  int n_alpha() const { return static_cast<int>(shape_basis.cols()); }
  int n_beta() const { return static_cast<int>(expr_basis.cols()); }

  // Throws std::invalid_argument when a structural invariant is violated.
  void validate() const;

  // Per-axis bounding box of the mean shape; defines the PNCC colour space.
  std::pair<Vector3d, Vector3d> ncc_bounds() const;
  // Per-vertex normalised coordinates in [0,1]^3 (clamped).
  nn::Matrix normalized_coords(const Vertices& canonical) const;
};

// Errors: std::invalid_argument on coefficient/basis dimension mismatch.
Vertices synthesize_vertices(const MorphableModel& model, const VectorXd& alpha,
                             const VectorXd& beta);

struct Projection {
  Vertices posed;
  nn::Matrix image_points;  // L x 2, pixels
};

// Rigid rotation and translation, then pixel = centre + scale * (x, y), where
// centre = (width / 2, height / 2).
Projection pose_and_project(const Vertices& v, const PoseParams& pose, int height,
                            int width);

// Per-pixel triangle coverage from a z-buffered rasterisation.
struct Rasterization {
  int height = 0;
  int width = 0;
  std::vector<int> triangle;                   // -1 for background
  std::vector<std::array<double, 3>> weights;  // barycentric weights

  bool covered(int y, int x) const { return triangle[y * width + x] >= 0; }
};

// Rasterises triangles whose corners are at `points` (pixels) with depths
// `depth`. Zero-area triangles are skipped; the nearest (smallest) depth
// wins and the first-drawn triangle wins exact ties.
Rasterization rasterize(const nn::Matrix& points, const Eigen::VectorXd& depth,
                        const std::vector<std::array<int, 3>>& topology,
                        int height, int width);

// Barycentric interpolation of per-vertex attributes (L x A) into an A-channel
// image; uncovered pixels are 0.
Image interpolate(const Rasterization& raster,
                  const std::vector<std::array<int, 3>>& topology,
                  const nn::Matrix& attributes);

// Rasterises the projected mesh and colours each covered pixel with the interpolated
// normalised coordinates of `canonical`.
PnccMap render_pncc(const Projection& posed, const Vertices& canonical,
                    const MorphableModel& model, int height, int width);

// Distance between the inner-lip vertex pair, canonical units.
double mouth_opening_size(const Vertices& v, const MorphableModel& model);

// Container kind "morphable_model", version 1. See container.h for layout.
void save_model(const std::filesystem::path& path, const MorphableModel& model);
MorphableModel load_model(const std::filesystem::path& path);

struct ToyModelOptions {
  int n_alpha = 8;
  int n_beta = 8;
};

// Deterministic toy face: a 20 x 10 vertex grid (L = 200) shaped into a
// domed oval, 68 landmarks, a mouth line between rows 13 and 14, and
// expression bases whose first eight columns are jaw-open, lip-spread,
// pucker, chin, brow-raise, blink, cheek and smile.
MorphableModel make_toy_model(std::uint64_t seed, const ToyModelOptions& options = {});

// Landmark positions of the 68-point layout that fall around the lips.
std::vector<int> lip_landmark_slots();
// Outer eye-corner slots (36, 45) of the 68-point layout.
std::pair<int, int> eye_corner_slots();

}  // namespace facedub
