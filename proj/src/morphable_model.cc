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

#include "facedub/morphable_model.h"

#include "facedub/container.h"
#include "facedub/errors.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>

namespace facedub {

Eigen::Matrix<double, PoseParams::kSize, 1> PoseParams::as_vector() const {
  Eigen::Matrix<double, kSize, 1> v;
  v << rotation, translation, scale;
  return v;
}

PoseParams PoseParams::from_vector(const Eigen::Matrix<double, kSize, 1>& v) {
  PoseParams p;
  p.rotation = v.segment<3>(0);
  p.translation = v.segment<3>(3);
  p.scale = v(6);
  return p;
}

void PoseParams::validate() const {
  if (!(scale > 0) || !std::isfinite(scale)) {
    throw std::invalid_argument("pose scale must be positive and finite");
  }
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw std::invalid_argument("pose angles/translation must be finite");
  }
}

Matrix3d rotation_matrix(const Vector3d& a) {
  const double cx = std::cos(a.x()), sx = std::sin(a.x());
  const double cy = std::cos(a.y()), sy = std::sin(a.y());
  const double cz = std::cos(a.z()), sz = std::sin(a.z());
  Matrix3d rx, ry, rz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  return rz * ry * rx;
}

std::array<Matrix3d, 3> rotation_matrix_derivatives(const Vector3d& a) {
  const double cx = std::cos(a.x()), sx = std::sin(a.x());
  const double cy = std::cos(a.y()), sy = std::sin(a.y());
  const double cz = std::cos(a.z()), sz = std::sin(a.z());
  Matrix3d rx, ry, rz, drx, dry, drz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  drx << 0, 0, 0, 0, -sx, -cx, 0, cx, -sx;
  dry << -sy, 0, cy, 0, 0, 0, -cy, 0, -sy;
  drz << -sz, -cz, 0, cz, -sz, 0, 0, 0, 0;
  return {rz * ry * drx, rz * dry * rx, drz * ry * rx};
}

void MorphableModel::validate() const {
  const int l = num_vertices();
  if (mean_shape.size() != 3 * l || l == 0) {
    throw std::invalid_argument("mean shape length must be a positive multiple of 3");
  }
  if (shape_basis.rows() != 3 * l || expr_basis.rows() != 3 * l) {
    throw std::invalid_argument("basis row count must equal 3L");
  }
  auto check_range = [l](const std::vector<int>& idx, const char* what) {
    for (int i : idx) {
      if (i < 0 || i >= l) {
        throw std::invalid_argument(std::string(what) + ": index out of range");
      }
    }
  };
  for (const auto& tri : topology) {
    check_range({tri[0], tri[1], tri[2]}, "topology");
  }
  check_range(landmark_indices, "landmark_indices");
  check_range(lower_face_indices, "lower_face_indices");
  check_range(upper_face_indices, "upper_face_indices");
  check_range(lip_region_indices, "lip_region_indices");
  check_range({inner_lip_pair.first, inner_lip_pair.second}, "inner_lip_pair");

  std::vector<int> owner(static_cast<std::size_t>(l), 0);
  for (int i : lower_face_indices) owner[static_cast<std::size_t>(i)] |= 1;
  for (int i : upper_face_indices) {
    if (owner[static_cast<std::size_t>(i)] & 1) {
      throw std::invalid_argument("lower and upper face index sets overlap");
    }
    owner[static_cast<std::size_t>(i)] |= 2;
  }
  for (int v : owner) {
    if (v == 0) throw std::invalid_argument("lower/upper face sets do not cover all vertices");
  }
  for (int i : lip_region_indices) {
    if (owner[static_cast<std::size_t>(i)] != 1) {
      throw std::invalid_argument("lip region must lie in the lower face");
    }
  }
}

std::pair<Vector3d, Vector3d> MorphableModel::ncc_bounds() const {
  Vector3d lo = Vector3d::Constant(std::numeric_limits<double>::infinity());
  Vector3d hi = -lo;
  for (int i = 0; i < num_vertices(); ++i) {
    const Vector3d p = mean_shape.segment<3>(3 * i);
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

nn::Matrix MorphableModel::normalized_coords(const Vertices& canonical) const {
  const auto [lo, hi] = ncc_bounds();
  nn::Matrix out(canonical.size(), 3);
  for (int i = 0; i < canonical.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      const double extent = hi(a) - lo(a);
      const double v = extent > 0 ? (canonical.coords(i, a) - lo(a)) / extent : 0.5;
      out(i, a) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

Vertices synthesize_vertices(const MorphableModel& model, const VectorXd& alpha,
                             const VectorXd& beta) {
  if (alpha.size() != model.n_alpha() || beta.size() != model.n_beta()) {
    throw std::invalid_argument("synthesize_vertices: coefficient dimension mismatch");
  }
  const VectorXd flat = model.mean_shape + model.shape_basis * alpha +
                        model.expr_basis * beta;
  return Vertices(Eigen::Map<const nn::Matrix>(flat.data(), model.num_vertices(), 3));
}

Projection pose_and_project(const Vertices& v, const PoseParams& pose, int height,
                            int width) {
  pose.validate();
  if (v.coords.cols() != 3) throw std::invalid_argument("vertices must be L x 3");
  const Matrix3d r = rotation_matrix(pose.rotation);
  Projection out;
  out.posed.coords = (v.coords * r.transpose()).rowwise() + pose.translation.transpose();
  out.image_points.resize(v.size(), 2);
  const double cx = width / 2.0, cy = height / 2.0;
  out.image_points.col(0) = (pose.scale * out.posed.coords.col(0)).array() + cx;
  out.image_points.col(1) = (pose.scale * out.posed.coords.col(1)).array() + cy;
  return out;
}

Rasterization rasterize(const nn::Matrix& points, const Eigen::VectorXd& depth,
                        const std::vector<std::array<int, 3>>& topology,
                        int height, int width) {
  Rasterization r;
  r.height = height;
  r.width = width;
  const std::size_t n = static_cast<std::size_t>(height) * width;
  r.triangle.assign(n, -1);
  r.weights.assign(n, {0.0, 0.0, 0.0});
  std::vector<double> zbuf(n, std::numeric_limits<double>::infinity());

  for (std::size_t t = 0; t < topology.size(); ++t) {
    const auto& tri = topology[t];
    const double x0 = points(tri[0], 0), y0 = points(tri[0], 1);
    const double x1 = points(tri[1], 0), y1 = points(tri[1], 1);
    const double x2 = points(tri[2], 0), y2 = points(tri[2], 1);
    const double area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0);
    if (std::abs(area) < 1e-12) continue;
    const int xmin = std::max(0, static_cast<int>(std::floor(std::min({x0, x1, x2}) - 0.5)));
    const int xmax = std::min(width - 1, static_cast<int>(std::ceil(std::max({x0, x1, x2}) - 0.5)));
    const int ymin = std::max(0, static_cast<int>(std::floor(std::min({y0, y1, y2}) - 0.5)));
    const int ymax = std::min(height - 1, static_cast<int>(std::ceil(std::max({y0, y1, y2}) - 0.5)));
    for (int y = ymin; y <= ymax; ++y) {
      const double py = y + 0.5;
      for (int x = xmin; x <= xmax; ++x) {
        const double px = x + 0.5;
        const double w0 = ((x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)) / area;
        const double w1 = ((x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)) / area;
        const double w2 = 1.0 - w0 - w1;
        constexpr double kEdge = -1e-12;
        if (w0 < kEdge || w1 < kEdge || w2 < kEdge) continue;
        const double z = w0 * depth(tri[0]) + w1 * depth(tri[1]) + w2 * depth(tri[2]);
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        if (z < zbuf[p]) {
          zbuf[p] = z;
          r.triangle[p] = static_cast<int>(t);
          r.weights[p] = {w0, w1, w2};
        }
      }
    }
  }
  return r;
}

Image interpolate(const Rasterization& raster,
                  const std::vector<std::array<int, 3>>& topology,
                  const nn::Matrix& attributes) {
  Image img(static_cast<int>(attributes.cols()), raster.height, raster.width);
  for (int y = 0; y < raster.height; ++y) {
    for (int x = 0; x < raster.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * raster.width + x;
      const int t = raster.triangle[p];
      if (t < 0) continue;
      const auto& tri = topology[static_cast<std::size_t>(t)];
      const auto& w = raster.weights[p];
      for (int c = 0; c < img.channels; ++c) {
        img.at(c, y, x) = w[0] * attributes(tri[0], c) + w[1] * attributes(tri[1], c) +
                          w[2] * attributes(tri[2], c);
      }
    }
  }
  return img;
}

PnccMap render_pncc(const Projection& posed, const Vertices& canonical,
                    const MorphableModel& model, int height, int width) {
  if (posed.posed.size() != canonical.size() ||
      posed.image_points.rows() != canonical.size()) {
    throw std::invalid_argument("render_pncc: posed/canonical vertex counts differ");
  }
  const Rasterization raster = rasterize(posed.image_points, posed.posed.coords.col(2),
                                         model.topology, height, width);
  PnccMap out{interpolate(raster, model.topology, model.normalized_coords(canonical))};
  for (double& v : out.image.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

double mouth_opening_size(const Vertices& v, const MorphableModel& model) {
  const auto [a, b] = model.inner_lip_pair;
  return (v.coords.row(a) - v.coords.row(b)).norm();
}

namespace {

nn::Matrix index_row(const std::vector<int>& idx) {
  nn::Matrix m(1, static_cast<nn::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) m(0, static_cast<nn::Index>(i)) = idx[i];
  return m;
}

std::vector<int> read_indices(const nn::Matrix& m) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (nn::Index i = 0; i < m.size(); ++i) {
    const double v = m.data()[i];
    if (v != std::floor(v) || v < 0) throw DataError("model file: bad index value");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

}  // namespace

void save_model(const std::filesystem::path& path, const MorphableModel& model) {
  model.validate();
  Container c;
  c.kind = "morphable_model";
  c.version = 1;
  c.meta = {{"num_vertices", model.num_vertices()},
            {"n_alpha", model.n_alpha()},
            {"n_beta", model.n_beta()}};
  c.arrays.push_back({"mean_shape", nn::Matrix(model.mean_shape.transpose())});
  c.arrays.push_back({"shape_basis", nn::Matrix(model.shape_basis)});
  c.arrays.push_back({"expr_basis", nn::Matrix(model.expr_basis)});
  nn::Matrix topo(static_cast<nn::Index>(model.topology.size()), 3);
  for (std::size_t t = 0; t < model.topology.size(); ++t) {
    for (int k = 0; k < 3; ++k) topo(static_cast<nn::Index>(t), k) = model.topology[t][static_cast<std::size_t>(k)];
  }
  c.arrays.push_back({"topology", topo});
  c.arrays.push_back({"landmark_indices", index_row(model.landmark_indices)});
  c.arrays.push_back({"lower_face_indices", index_row(model.lower_face_indices)});
  c.arrays.push_back({"upper_face_indices", index_row(model.upper_face_indices)});
  c.arrays.push_back({"lip_region_indices", index_row(model.lip_region_indices)});
  c.arrays.push_back({"inner_lip_pair",
                      index_row({model.inner_lip_pair.first, model.inner_lip_pair.second})});
  write_container(path, c);
}

MorphableModel load_model(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "morphable_model") throw DataError("not a morphable model file");
  if (c.version != 1) throw DataError("unsupported morphable model version");
  MorphableModel m;
  const nn::Matrix& mean = c.array("mean_shape");
  m.mean_shape = Eigen::Map<const VectorXd>(mean.data(), mean.size());
  m.shape_basis = c.array("shape_basis");
  m.expr_basis = c.array("expr_basis");
  const nn::Matrix& topo = c.array("topology");
  if (topo.cols() != 3) throw DataError("model file: topology must have 3 columns");
  const auto flat = read_indices(topo);
  for (std::size_t t = 0; t < flat.size(); t += 3) {
    m.topology.push_back({flat[t], flat[t + 1], flat[t + 2]});
  }
  m.landmark_indices = read_indices(c.array("landmark_indices"));
  m.lower_face_indices = read_indices(c.array("lower_face_indices"));
  m.upper_face_indices = read_indices(c.array("upper_face_indices"));
  m.lip_region_indices = read_indices(c.array("lip_region_indices"));
  const auto pair = read_indices(c.array("inner_lip_pair"));
  if (pair.size() != 2) throw DataError("model file: inner_lip_pair must have 2 entries");
  m.inner_lip_pair = {pair[0], pair[1]};
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("model file: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Toy model.

namespace {

constexpr int kRows = 20;
constexpr int kCols = 10;
constexpr int kMouthUpperRow = 13;
constexpr int kMouthLowerRow = 14;
constexpr int kFirstLowerRow = 11;

int vid(int r, int c) { return r * kCols + c; }

}  // namespace

std::vector<int> lip_landmark_slots() {
  std::vector<int> s;
  for (int i = 48; i < 68; ++i) s.push_back(i);
  return s;
}

std::pair<int, int> eye_corner_slots() { return {36, 45}; }

MorphableModel make_toy_model(std::uint64_t seed, const ToyModelOptions& options) {
  if (options.n_alpha < 0 || options.n_beta < 8) {
    throw std::invalid_argument("toy model needs n_alpha >= 0 and n_beta >= 8");
  }
  std::mt19937_64 rng(seed);
  const int l = kRows * kCols;
  MorphableModel m;

  nn::Matrix mean(l, 3);
  for (int r = 0; r < kRows; ++r) {
    const double y = -1.1 + 2.2 * r / (kRows - 1);
    const double half = 0.85 * std::sqrt(1.0 - (y / 1.35) * (y / 1.35));
    for (int c = 0; c < kCols; ++c) {
      const double x = half * (2.0 * c / (kCols - 1) - 1.0);
      double z = -0.6 * std::sqrt(std::max(0.0, 1.0 - (x / 0.95) * (x / 0.95) -
                                                    (y / 1.4) * (y / 1.4)));
      z -= 0.25 * std::exp(-(x * x / 0.02 + (y - 0.05) * (y - 0.05) / 0.08));
      mean.row(vid(r, c)) << x, y, z;
    }
  }
  mean.rowwise() -= mean.colwise().mean();
  m.mean_shape = Eigen::Map<const VectorXd>(mean.data(), 3 * l);

  for (int r = 0; r + 1 < kRows; ++r) {
    for (int c = 0; c + 1 < kCols; ++c) {
      m.topology.push_back({vid(r, c), vid(r + 1, c), vid(r, c + 1)});
      m.topology.push_back({vid(r, c + 1), vid(r + 1, c), vid(r + 1, c + 1)});
    }
  }

  auto smooth_field = [&](double amp) {
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 2.0 * 3.141592653589793);
    VectorXd f(3 * l);
    double fx[3], fy[3], px[3], py[3], a[3];
    for (int k = 0; k < 3; ++k) {
      fx[k] = 0.5 + 1.5 * std::abs(n(rng));
      fy[k] = 0.5 + 1.5 * std::abs(n(rng));
      px[k] = u(rng);
      py[k] = u(rng);
      a[k] = n(rng);
    }
    for (int i = 0; i < l; ++i) {
      for (int k = 0; k < 3; ++k) {
        f(3 * i + k) = amp * a[k] * std::sin(fx[k] * mean(i, 0) + px[k]) *
                       std::cos(fy[k] * mean(i, 1) + py[k]);
      }
    }
    return f;
  };

  m.shape_basis.resize(3 * l, options.n_alpha);
  for (int j = 0; j < options.n_alpha; ++j) m.shape_basis.col(j) = smooth_field(0.05);

  m.expr_basis = MatrixXd::Zero(3 * l, options.n_beta);
  auto set = [&](int col, int r, int c, double dx, double dy, double dz) {
    m.expr_basis(3 * vid(r, c) + 0, col) += dx;
    m.expr_basis(3 * vid(r, c) + 1, col) += dy;
    m.expr_basis(3 * vid(r, c) + 2, col) += dz;
  };
  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c < kCols; ++c) {
      const double x = mean(vid(r, c), 0);
      const double ax = std::abs(x);
      const double sx = x >= 0 ? 1.0 : -1.0;
      // 0: jaw open, everything below the mouth line drops.
      if (r >= kMouthLowerRow) {
        const double drop = 0.25 * (1.0 + 0.3 * (r - kMouthLowerRow) / 5.0);
        set(0, r, c, 0.0, drop * (1.0 - 0.3 * ax), 0.03);
      }
      // 1: lip spread.
      if (r >= 12 && r <= 15) set(1, r, c, 0.15 * x * (1.0 - 0.25 * std::abs(r - 13.5)), 0, 0);
      // 2: pucker.
      if (r >= 12 && r <= 15 && c >= 3 && c <= 6) {
        set(2, r, c, -0.05 * x, 0.0, -0.1 * std::max(0.0, 1.0 - ax / 0.5));
      }
      // 3: chin.
      if (r >= kMouthLowerRow) {
        set(3, r, c, 0.0, 0.02, 0.08 * std::sin(3.14159 * (r - kMouthLowerRow) / 5.0));
      }
      // 4: brow raise.
      if (r >= 1 && r <= 4) set(4, r, c, 0.0, -0.1, 0.0);
      // 5: blink.
      if (r == 5 && (c <= 3 || c >= 6)) set(5, r, c, 0.0, 0.06, 0.0);
      // 6: cheek.
      if (r >= 8 && r <= 14 && ax > 0.3) set(6, r, c, 0.05 * sx, 0.0, -0.02);
      // 7: smile.
      if (r >= 12 && r <= 15 && (c == 2 || c == 7)) set(7, r, c, 0.05 * sx, -0.08, 0.0);
    }
  }
  for (int j = 8; j < options.n_beta; ++j) m.expr_basis.col(j) = smooth_field(0.05);

  // 68-point layout.
  std::vector<int> boundary;
  for (int r = 7; r < kRows; ++r) boundary.push_back(vid(r, 0));
  for (int c = 1; c < kCols - 1; ++c) boundary.push_back(vid(kRows - 1, c));
  for (int r = kRows - 1; r >= 7; --r) boundary.push_back(vid(r, kCols - 1));
  for (int j = 0; j < 17; ++j) {
    const auto pos = static_cast<std::size_t>(
        std::lround(j * static_cast<double>(boundary.size() - 1) / 16.0));
    m.landmark_indices.push_back(boundary[pos]);
  }
  for (int c = 0; c < 5; ++c) m.landmark_indices.push_back(vid(3, c));
  for (int c = 5; c < 10; ++c) m.landmark_indices.push_back(vid(3, c));
  for (int r = 5; r <= 8; ++r) m.landmark_indices.push_back(vid(r, 4));
  for (int c = 2; c <= 6; ++c) m.landmark_indices.push_back(vid(10, c));
  for (auto [r, c] : {std::pair{5, 1}, {5, 2}, {5, 3}, {6, 3}, {6, 2}, {6, 1},
                      {6, 6}, {5, 6}, {5, 7}, {5, 8}, {6, 8}, {6, 7}}) {
    m.landmark_indices.push_back(vid(r, c));
  }
  for (auto [r, c] : {std::pair{13, 2}, {12, 3}, {12, 4}, {12, 5}, {12, 6}, {13, 7},
                      {14, 7}, {15, 6}, {15, 5}, {15, 4}, {15, 3}, {14, 2},
                      {13, 3}, {13, 4}, {13, 5}, {13, 6}, {14, 6}, {14, 5}, {14, 4}, {14, 3}}) {
    m.landmark_indices.push_back(vid(r, c));
  }

  for (int r = 0; r < kRows; ++r) {
    for (int c = 0; c < kCols; ++c) {
      (r >= kFirstLowerRow ? m.lower_face_indices : m.upper_face_indices).push_back(vid(r, c));
      if (r >= 12 && r <= 15 && c >= 2 && c <= 7) m.lip_region_indices.push_back(vid(r, c));
    }
  }
  m.inner_lip_pair = {vid(kMouthUpperRow, 4), vid(kMouthLowerRow, 4)};
  m.validate();
  return m;
}

}  // namespace facedub
