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

#include "facedub/eval_metrics.h"

#include "facedub/morphable_model.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace facedub {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

Eigen::MatrixXd grayscale(const Image& img) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(img.height, img.width);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) g(y, x) += img.at(c, y, x);
    }
  }
  return g / img.channels;
}

Eigen::MatrixXd gaussian_window() {
  Eigen::MatrixXd w(kWindow, kWindow);
  const int r = kWindow / 2;
  for (int y = 0; y < kWindow; ++y) {
    for (int x = 0; x < kWindow; ++x) {
      w(y, x) = std::exp(-((y - r) * (y - r) + (x - r) * (x - r)) / (2 * kSigma * kSigma));
    }
  }
  return w / w.sum();
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b) || a.data.empty()) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) mse += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  mse /= static_cast<double>(a.data.size());
  if (mse == 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  if (a.height < kWindow || a.width < kWindow) throw std::invalid_argument("ssim: frame smaller than window");
  const Eigen::MatrixXd ga = grayscale(a), gb = grayscale(b), w = gaussian_window();
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  for (int y = 0; y + kWindow <= a.height; ++y) {
    for (int x = 0; x + kWindow <= a.width; ++x) {
      const auto pa = ga.block(y, x, kWindow, kWindow).array();
      const auto pb = gb.block(y, x, kWindow, kWindow).array();
      const double ma = (w.array() * pa).sum(), mb = (w.array() * pb).sum();
      const double va = (w.array() * pa * pa).sum() - ma * ma;
      const double vb = (w.array() * pb * pb).sum() - mb * mb;
      const double cov = (w.array() * pa * pb).sum() - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / count;
}

double lmd(const LandmarkTrack& pred, const LandmarkTrack& gt, const std::vector<int>& slots,
           double norm_scale) {
  if (!(norm_scale > 0)) throw std::invalid_argument("lmd: norm_scale must be positive");
  if (pred.size() != gt.size() || pred.size() == 0 || pred.num_points() != gt.num_points()) {
    throw std::invalid_argument("lmd: tracks are not aligned");
  }
  if (slots.empty()) throw std::invalid_argument("lmd: no landmark slots");
  double total = 0;
  for (int t = 0; t < pred.size(); ++t) {
    for (int k : slots) {
      if (k < 0 || k >= pred.num_points()) throw std::invalid_argument("lmd: slot out of range");
      total += (pred.frames[t].row(k) - gt.frames[t].row(k)).norm();
    }
  }
  return total / (static_cast<double>(pred.size()) * slots.size()) / norm_scale;
}

double interocular_distance(const LandmarkTrack& gt) {
  const auto [l, r] = eye_corner_slots();
  double d = 0;
  if (gt.num_points() > std::max(l, r)) {
    for (const auto& f : gt.frames) d += (f.row(l) - f.row(r)).norm();
    d /= gt.size();
  }
  return d > 0 ? d : static_cast<double>(gt.width);
}

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine: dimension mismatch");
  const double na = a.norm(), nb = b.norm();
  if (na == 0 || nb == 0) throw std::invalid_argument("cosine: zero-norm embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

double style_sim(const Eigen::MatrixXd& beta_a, const Eigen::MatrixXd& beta_b,
                 const StyleFunction& phi) {
  return cosine_similarity(phi(beta_a), phi(beta_b));
}

const std::vector<std::string>& MetricRegistry::known_names() {
  static const std::vector<std::string> names = {"fid", "csim", "sync_score", "lpips"};
  return names;
}

void MetricRegistry::register_adapter(const std::string& name, Adapter fn) {
  const auto& k = known_names();
  if (std::find(k.begin(), k.end(), name) == k.end()) {
    throw std::invalid_argument("unknown metric: " + name);
  }
  adapters_[name] = std::move(fn);
}

AdapterOutcome MetricRegistry::run(const std::string& name, const MetricInputs& inputs) const {
  const auto& k = known_names();
  if (std::find(k.begin(), k.end(), name) == k.end()) {
    throw std::invalid_argument("unknown metric: " + name);
  }
  const auto it = adapters_.find(name);
  if (it == adapters_.end()) return {"skipped", 0.0, "no adapter registered"};
  try {
    return {"ok", it->second(inputs), ""};
  } catch (const std::exception& e) {
    return {"failed", 0.0, e.what()};
  }
}

}  // namespace facedub
