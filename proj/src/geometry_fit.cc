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

#include "facedub/geometry_fit.h"

#include "facedub/errors.h"
#include "facedub/optim.h"

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace facedub {

namespace {

constexpr double kPi = 3.141592653589793;

void check_track(const LandmarkTrack& gt, const MorphableModel& model, int t) {
  if (gt.size() != t) throw std::invalid_argument("landmark track length differs from timeline");
  for (const auto& f : gt.frames) {
    if (f.rows() != static_cast<nn::Index>(model.landmark_indices.size()) || f.cols() != 2) {
      throw std::invalid_argument("landmark count does not match the model");
    }
  }
}

// Zero at the origin.
Eigen::VectorXd unit_or_zero(const Eigen::VectorXd& v, double n) {
  return n > 0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Zero(v.size());
}

struct FramePoints {
  nn::Matrix canonical;  // K x 3
  nn::Matrix posed;      // K x 3
  nn::Matrix pixels;     // K x 2
  Matrix3d r;
};

FramePoints frame_points(const MorphableModel& model, const FrameCoeffs& c, int height,
                         int width) {
  const auto k = static_cast<nn::Index>(model.landmark_indices.size());
  FramePoints fp;
  fp.canonical.resize(k, 3);
  fp.posed.resize(k, 3);
  fp.pixels.resize(k, 2);
  fp.r = rotation_matrix(c.pose.rotation);
  for (nn::Index j = 0; j < k; ++j) {
    const int i = model.landmark_indices[static_cast<std::size_t>(j)];
    Vector3d v = model.mean_shape.segment<3>(3 * i);
    if (c.alpha.size() > 0) v += model.shape_basis.middleRows(3 * i, 3) * c.alpha;
    if (c.beta.size() > 0) v += model.expr_basis.middleRows(3 * i, 3) * c.beta;
    const Vector3d q = fp.r * v + c.pose.translation;
    fp.canonical.row(j) = v.transpose();
    fp.posed.row(j) = q.transpose();
    fp.pixels(j, 0) = width / 2.0 + c.pose.scale * q.x();
    fp.pixels(j, 1) = height / 2.0 + c.pose.scale * q.y();
  }
  return fp;
}

// Chains d(loss)/d(pixels) (K x 2) of one frame into its packed gradient row.
void backprop_frame(const MorphableModel& model, const FrameCoeffs& c, const FramePoints& fp,
                    const nn::Matrix& gpix, Eigen::Ref<Eigen::RowVectorXd> grow) {
  const int na = static_cast<int>(c.alpha.size());
  const int nb = static_cast<int>(c.beta.size());
  const auto dr = rotation_matrix_derivatives(c.pose.rotation);
  const double s = c.pose.scale;
  for (nn::Index j = 0; j < gpix.rows(); ++j) {
    const Vector3d gq(s * gpix(j, 0), s * gpix(j, 1), 0.0);
    if (gq.x() == 0 && gq.y() == 0) continue;
    const int i = model.landmark_indices[static_cast<std::size_t>(j)];
    const Vector3d v = fp.canonical.row(j).transpose();
    const Vector3d gv = fp.r.transpose() * gq;
    if (na > 0) grow.segment(0, na) += (model.shape_basis.middleRows(3 * i, 3).transpose() * gv).transpose();
    if (nb > 0) grow.segment(na, nb) += (model.expr_basis.middleRows(3 * i, 3).transpose() * gv).transpose();
    for (int a = 0; a < 3; ++a) grow(na + nb + a) += gq.dot(dr[static_cast<std::size_t>(a)] * v);
    grow.segment(na + nb + 3, 3) += gq.transpose();
    grow(na + nb + 6) += gpix(j, 0) * fp.posed(j, 0) + gpix(j, 1) * fp.posed(j, 1);
  }
}

std::vector<FramePoints> all_points(const CoeffTimeline& tl, const LandmarkTrack& gt,
                                    const MorphableModel& model) {
  std::vector<FramePoints> out;
  out.reserve(tl.frames.size());
  for (const auto& f : tl.frames) out.push_back(frame_points(model, f, gt.height, gt.width));
  return out;
}

// Adds sum over interior t of ||lap(x)_t|| for columns [col, col + n) of the
// packed rows; returns the sum.
double laplacian_term(const nn::Matrix& rows, int col, int n, double weight, nn::Matrix* grad) {
  double total = 0;
  for (nn::Index t = 1; t + 1 < rows.rows(); ++t) {
    const Eigen::VectorXd lap = (rows.block(t - 1, col, 1, n) - 2 * rows.block(t, col, 1, n) +
                                 rows.block(t + 1, col, 1, n)).transpose();
    const double norm = lap.norm();
    total += norm;
    if (grad && norm > 0) {
      const Eigen::RowVectorXd u = weight * lap.transpose() / norm;
      grad->block(t - 1, col, 1, n) += u;
      grad->block(t, col, 1, n) -= 2 * u;
      grad->block(t + 1, col, 1, n) += u;
    }
  }
  return total;
}

double delta_term(const CoeffTimeline& tl, const LandmarkTrack& gt, const MorphableModel& model,
                  nn::Matrix* grad) {
  const int t_len = tl.size();
  if (t_len < 2) return 0;
  const auto pts = all_points(tl, gt, model);
  const auto k = static_cast<nn::Index>(model.landmark_indices.size());
  std::vector<nn::Matrix> gpix(pts.size(), nn::Matrix::Zero(k, 2));
  double total = 0;
  for (int t = 0; t + 1 < t_len; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    for (nn::Index j = 0; j < k; ++j) {
      const Eigen::Vector2d e =
          (pts[ut + 1].pixels.row(j) - pts[ut].pixels.row(j) -
           (gt.frames[ut + 1].row(j) - gt.frames[ut].row(j))).transpose();
      const double n = e.norm();
      total += n;
      if (grad && n > 0) {
        gpix[ut + 1].row(j) += e.transpose() / n;
        gpix[ut].row(j) -= e.transpose() / n;
      }
    }
  }
  if (grad) {
    for (int t = 0; t < t_len; ++t) {
      backprop_frame(model, tl.frames[static_cast<std::size_t>(t)], pts[static_cast<std::size_t>(t)],
                     gpix[static_cast<std::size_t>(t)], grad->row(t));
    }
  }
  return total;
}

void prepare_grad(nn::Matrix* grad, const CoeffTimeline& tl) {
  if (grad) *grad = nn::Matrix::Zero(tl.size(), tl.n_alpha() + tl.n_beta() + PoseParams::kSize);
}

}  // namespace

VectorXd CoeffTimeline::mean_alpha() const {
  validate();
  VectorXd m = VectorXd::Zero(n_alpha());
  for (const auto& f : frames) m += f.alpha;
  return m / static_cast<double>(frames.size());
}

void CoeffTimeline::validate() const {
  if (frames.empty()) throw std::invalid_argument("coefficient timeline is empty");
  for (const auto& f : frames) {
    if (f.alpha.size() != frames[0].alpha.size() || f.beta.size() != frames[0].beta.size()) {
      throw std::invalid_argument("timeline frames disagree on coefficient dims");
    }
  }
}

nn::Matrix pack(const CoeffTimeline& timeline) {
  timeline.validate();
  const int na = timeline.n_alpha(), nb = timeline.n_beta();
  nn::Matrix rows(timeline.size(), na + nb + PoseParams::kSize);
  for (int t = 0; t < timeline.size(); ++t) {
    const auto& f = timeline.frames[static_cast<std::size_t>(t)];
    rows.block(t, 0, 1, na) = f.alpha.transpose();
    rows.block(t, na, 1, nb) = f.beta.transpose();
    rows.block(t, na + nb, 1, PoseParams::kSize) = f.pose.as_vector().transpose();
  }
  return rows;
}

CoeffTimeline unpack(const nn::Matrix& rows, int n_alpha, int n_beta, double fps) {
  if (rows.cols() != n_alpha + n_beta + PoseParams::kSize) {
    throw std::invalid_argument("packed coefficient width mismatch");
  }
  CoeffTimeline tl;
  tl.fps = fps;
  for (nn::Index t = 0; t < rows.rows(); ++t) {
    FrameCoeffs f;
    f.alpha = rows.block(t, 0, 1, n_alpha).transpose();
    f.beta = rows.block(t, n_alpha, 1, n_beta).transpose();
    f.pose = PoseParams::from_vector(rows.block(t, n_alpha + n_beta, 1, PoseParams::kSize).transpose());
    tl.frames.push_back(std::move(f));
  }
  return tl;
}

nn::Matrix project_landmarks(const MorphableModel& model, const FrameCoeffs& c, int height,
                             int width) {
  if (c.alpha.size() != model.n_alpha() || c.beta.size() != model.n_beta()) {
    throw std::invalid_argument("coefficient dims do not match the model");
  }
  return frame_points(model, c, height, width).pixels;
}

LandmarkTrack project_landmarks(const MorphableModel& model, const CoeffTimeline& timeline,
                                int height, int width) {
  LandmarkTrack track;
  track.height = height;
  track.width = width;
  for (const auto& f : timeline.frames) track.frames.push_back(project_landmarks(model, f, height, width));
  return track;
}

void write_coeffs(const std::filesystem::path& path, const CoeffTimeline& timeline) {
  timeline.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << std::setprecision(17);
  out << "facedub-coeffs 1 " << timeline.n_alpha() << " " << timeline.n_beta() << " "
      << timeline.size() << " " << timeline.fps << "\n";
  const nn::Matrix rows = pack(timeline);
  for (nn::Index t = 0; t < rows.rows(); ++t) {
    out << t + 1;
    for (nn::Index j = 0; j < rows.cols(); ++j) out << " " << rows(t, j);
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path.string());
}

CoeffTimeline read_coeffs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string magic;
  int version = 0, na = -1, nb = -1, t_len = 0;
  double fps = 0;
  in >> magic >> version >> na >> nb >> t_len >> fps;
  if (!in || magic != "facedub-coeffs" || version != 1 || na < 0 || nb < 0 || t_len < 1 ||
      !(fps > 0)) {
    throw DataError("malformed coefficient header: " + path.string());
  }
  nn::Matrix rows(t_len, na + nb + PoseParams::kSize);
  for (int t = 0; t < t_len; ++t) {
    int index = 0;
    if (!(in >> index) || index != t + 1) throw DataError("bad frame index in " + path.string());
    for (nn::Index j = 0; j < rows.cols(); ++j) {
      if (!(in >> rows(t, j))) throw DataError("truncated coefficient file: " + path.string());
    }
  }
  if (!rows.allFinite()) throw DataError("non-finite coefficient in " + path.string());
  CoeffTimeline tl = unpack(rows, na, nb, fps);
  for (const auto& f : tl.frames) {
    try {
      f.pose.validate();
    } catch (const std::invalid_argument& e) {
      throw DataError(std::string(e.what()) + " in " + path.string());
    }
  }
  return tl;
}

void write_landmarks(const std::filesystem::path& path, const LandmarkTrack& track) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << std::setprecision(17);
  out << "facedub-landmarks 1 " << track.size() << " " << track.num_points() << " "
      << track.height << " " << track.width << "\n";
  for (int t = 0; t < track.size(); ++t) {
    out << t + 1;
    const auto& f = track.frames[static_cast<std::size_t>(t)];
    for (nn::Index j = 0; j < f.rows(); ++j) out << " " << f(j, 0) << " " << f(j, 1);
    out << "\n";
  }
  if (!out) throw DataError("write failed: " + path.string());
}

LandmarkTrack read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  std::string magic;
  int version = 0, t_len = 0, k = 0;
  LandmarkTrack track;
  in >> magic >> version >> t_len >> k >> track.height >> track.width;
  if (!in || magic != "facedub-landmarks" || version != 1 || t_len < 1 || k < 1 ||
      track.height < 1 || track.width < 1) {
    throw DataError("malformed landmark header: " + path.string());
  }
  for (int t = 0; t < t_len; ++t) {
    int index = 0;
    if (!(in >> index) || index != t + 1) throw DataError("bad frame index in " + path.string());
    nn::Matrix f(k, 2);
    for (int j = 0; j < k; ++j) {
      if (!(in >> f(j, 0) >> f(j, 1))) throw DataError("truncated landmark file: " + path.string());
    }
    if (!f.allFinite()) throw DataError("non-finite landmark in " + path.string());
    track.frames.push_back(std::move(f));
  }
  return track;
}

CoeffTimeline init_coeffs(const std::filesystem::path& coeff_file) {
  return read_coeffs(coeff_file);
}

CoeffTimeline init_coeffs(const LandmarkTrack& track, const MorphableModel& model, double fps) {
  if (track.size() < 1) throw std::invalid_argument("empty landmark track");
  check_track(track, model, track.size());
  const auto k = static_cast<nn::Index>(model.landmark_indices.size());
  Eigen::MatrixXd x(k, 3);
  for (nn::Index j = 0; j < k; ++j) {
    x.row(j) = model.mean_shape.segment<3>(3 * model.landmark_indices[static_cast<std::size_t>(j)]).transpose();
  }
  const Eigen::RowVector3d xbar = x.colwise().mean();
  const Eigen::MatrixXd xc = x.rowwise() - xbar;
  const Eigen::Matrix3d xtx_inv = (xc.transpose() * xc).inverse();

  CoeffTimeline tl;
  tl.fps = fps;
  for (const auto& obs : track.frames) {
    const Eigen::RowVector2d ybar = obs.colwise().mean();
    const Eigen::MatrixXd yc = obs.rowwise() - ybar;
    // Pixel offsets ~ M * canonical offsets, M = s * (first two rows of R).
    const Eigen::Matrix<double, 2, 3> m = yc.transpose() * xc * xtx_inv;
    Eigen::JacobiSVD<Eigen::Matrix<double, 2, 3>> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix<double, 2, 3> q = svd.matrixU() * svd.matrixV().leftCols<2>().transpose();
    Matrix3d r;
    r.row(0) = q.row(0);
    r.row(1) = q.row(1);
    r.row(2) = q.row(0).cross(q.row(1));

    FrameCoeffs f;
    f.alpha = VectorXd::Zero(model.n_alpha());
    f.beta = VectorXd::Zero(model.n_beta());
    f.pose.scale = svd.singularValues().mean();
    f.pose.rotation = Vector3d(std::atan2(r(2, 1), r(2, 2)),
                               std::asin(std::clamp(-r(2, 0), -1.0, 1.0)),
                               std::atan2(r(1, 0), r(0, 0)));
    const Vector3d rx = r * xbar.transpose();
    f.pose.translation = Vector3d((ybar.x() - track.width / 2.0) / f.pose.scale - rx.x(),
                                  (ybar.y() - track.height / 2.0) / f.pose.scale - rx.y(), 0.0);
    tl.frames.push_back(std::move(f));
  }
  return tl;
}

double tempo_loss(const CoeffTimeline& timeline, const LandmarkTrack& gt,
                  const MorphableModel& model, double lambda, nn::Matrix* grad) {
  if (lambda < 0) throw std::invalid_argument("lambda must be non-negative");
  timeline.validate();
  check_track(gt, model, timeline.size());
  prepare_grad(grad, timeline);
  const double delta = delta_term(timeline, gt, model, grad);
  const nn::Matrix rows = pack(timeline);
  const int na = timeline.n_alpha(), nb = timeline.n_beta();
  const double lap = laplacian_term(rows, na + nb, PoseParams::kSize, lambda, grad) +
                     laplacian_term(rows, na, nb, lambda, grad);
  return delta + lambda * lap;
}

double reg_loss(const CoeffTimeline& timeline, const CoeffTimeline& init, nn::Matrix* grad) {
  timeline.validate();
  init.validate();
  if (timeline.size() != init.size() || timeline.n_alpha() != init.n_alpha() ||
      timeline.n_beta() != init.n_beta()) {
    throw std::invalid_argument("timeline and init differ in length or dims");
  }
  prepare_grad(grad, timeline);
  const VectorXd abar = init.mean_alpha();
  const int na = timeline.n_alpha(), nb = timeline.n_beta();
  double total = 0;
  for (int t = 0; t < timeline.size(); ++t) {
    const auto& f = timeline.frames[static_cast<std::size_t>(t)];
    const auto& f0 = init.frames[static_cast<std::size_t>(t)];
    const VectorXd da = f.alpha - abar;
    const VectorXd db = f.beta - f0.beta;
    const VectorXd dp = f.pose.as_vector() - f0.pose.as_vector();
    const double na_ = da.norm(), nb_ = db.norm(), np_ = dp.norm();
    total += na_ + nb_ + np_;
    if (grad) {
      grad->block(t, 0, 1, na) += unit_or_zero(da, na_).transpose();
      grad->block(t, na, 1, nb) += unit_or_zero(db, nb_).transpose();
      grad->block(t, na + nb, 1, PoseParams::kSize) += unit_or_zero(dp, np_).transpose();
    }
  }
  return total;
}

double landmark_loss(const CoeffTimeline& timeline, const LandmarkTrack& gt,
                     const MorphableModel& model, nn::Matrix* grad) {
  timeline.validate();
  check_track(gt, model, timeline.size());
  prepare_grad(grad, timeline);
  double total = 0;
  for (int t = 0; t < timeline.size(); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const FramePoints fp = frame_points(model, timeline.frames[ut], gt.height, gt.width);
    const nn::Matrix e = fp.pixels - gt.frames[ut];
    nn::Matrix gpix = nn::Matrix::Zero(e.rows(), 2);
    for (nn::Index j = 0; j < e.rows(); ++j) {
      const double n = e.row(j).norm();
      total += n;
      if (n > 0) gpix.row(j) = e.row(j) / n;
    }
    if (grad) backprop_frame(model, timeline.frames[ut], fp, gpix, grad->row(t));
  }
  return total;
}

double laplacian_energy(const CoeffTimeline& timeline) {
  const nn::Matrix rows = pack(timeline);
  const int na = timeline.n_alpha(), nb = timeline.n_beta();
  return laplacian_term(rows, na + nb, PoseParams::kSize, 1.0, nullptr) +
         laplacian_term(rows, na, nb, 1.0, nullptr);
}

double fit_objective(const CoeffTimeline& timeline, const CoeffTimeline& init,
                     const LandmarkTrack& gt, const MorphableModel& model,
                     const FitOptions& options, nn::Matrix* grad) {
  double total = 0;
  nn::Matrix g;
  prepare_grad(grad, timeline);
  if (options.temporal) {
    total += tempo_loss(timeline, gt, model, options.lambda, grad ? &g : nullptr);
    if (grad) *grad += g;
  }
  if (options.w_reg != 0) {
    total += options.w_reg * reg_loss(timeline, init, grad ? &g : nullptr);
    if (grad) *grad += options.w_reg * g;
  }
  if (options.w_lmk != 0) {
    total += options.w_lmk * landmark_loss(timeline, gt, model, grad ? &g : nullptr);
    if (grad) *grad += options.w_lmk * g;
  }
  return total;
}

constexpr int kMaxHalvings = 10;

FitResult optimize_coeffs(const CoeffTimeline& init, const LandmarkTrack& gt,
                          const MorphableModel& model, const FitOptions& options) {
  if (options.iters < 0) throw std::invalid_argument("iters must be non-negative");
  init.validate();
  check_track(gt, model, init.size());
  FitResult result;
  result.timeline = init;
  auto checked = [](double v, int it) {
    if (!std::isfinite(v)) {
      throw NumericError("geometry fit objective became non-finite at iteration " +
                         std::to_string(it));
    }
    return v;
  };
  if (options.iters == 0 || options.step == 0) {
    const double v = checked(fit_objective(init, init, gt, model, options), 0);
    result.loss_trace.assign(static_cast<std::size_t>(options.iters) + 1, v);
    return result;
  }

  const int na = init.n_alpha(), nb = init.n_beta();
  const int scale_col = na + nb + PoseParams::kSize - 1;
  nn::Matrix theta = pack(init);
  theta.col(scale_col) = theta.col(scale_col).array().log().matrix();
  nn::Tensor param = nn::Tensor::parameter(theta);
  nn::Adam adam({param});

  auto decode = [&](const nn::Matrix& th) {
    nn::Matrix rows = th;
    rows.col(scale_col) = th.col(scale_col).array().exp().matrix();
    return unpack(rows, na, nb, init.fps);
  };

  nn::Matrix g;
  double v = checked(fit_objective(decode(param.value()), init, gt, model, options, &g), 0);
  result.loss_trace.push_back(v);
  for (int it = 0; it < options.iters; ++it) {
    const nn::Matrix before = param.value();
    // d/d(log s) = s * d/ds.
    g.col(scale_col) = g.col(scale_col).cwiseProduct(before.col(scale_col).array().exp().matrix());
    if (!g.allFinite()) throw NumericError("geometry fit gradient became non-finite");
    param.zero_grad();
    param.node()->accumulate(g);
    const double lr = options.step * 0.5 * (1.0 + std::cos(kPi * it / options.iters));
    adam.step(lr);
    const nn::Matrix delta = param.value() - before;
    // Halve a step that raises the objective, up to kMaxHalvings times.
    nn::Matrix trial_grad;
    double trial = 0;
    for (int k = 0;; ++k) {
      param.mutable_value() = before + std::ldexp(1.0, -k) * delta;
      trial = checked(fit_objective(decode(param.value()), init, gt, model, options, &trial_grad), it + 1);
      if (trial <= v || k == kMaxHalvings) break;
    }
    v = trial;
    g = std::move(trial_grad);
    result.loss_trace.push_back(v);
  }
  result.timeline = decode(param.value());
  return result;
}

double mean_reprojection_error(const CoeffTimeline& timeline, const LandmarkTrack& gt,
                               const MorphableModel& model) {
  check_track(gt, model, timeline.size());
  double total = 0;
  nn::Index count = 0;
  for (int t = 0; t < timeline.size(); ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const nn::Matrix p = project_landmarks(model, timeline.frames[ut], gt.height, gt.width);
    total += (p - gt.frames[ut]).rowwise().norm().sum();
    count += p.rows();
  }
  return total / static_cast<double>(count);
}

}  // namespace facedub
