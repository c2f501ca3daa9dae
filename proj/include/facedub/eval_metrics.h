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

// Frame, landmark and style metrics, plus a registry for metrics that need
// external pretrained networks.

#include "facedub/geometry_fit.h"
#include "facedub/image.h"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace facedub {

// 10 log10(1 / MSE), capped at 100 dB. Throws std::invalid_argument on shape
// mismatch.
double psnr(const Image& a, const Image& b);

// Mean SSIM over all valid 11 x 11 Gaussian (sigma 1.5) windows of the
// channel-mean grayscale images, C1 = 0.01^2, C2 = 0.03^2.
double ssim(const Image& a, const Image& b);

// Mean over frames and the listed landmark slots of ||pred - gt|| / norm_scale.
double lmd(const LandmarkTrack& pred, const LandmarkTrack& gt, const std::vector<int>& slots,
           double norm_scale);
// Mean distance between the outer eye corners of gt; the crop width when that
// is zero.
double interocular_distance(const LandmarkTrack& gt);

// Throws std::invalid_argument when either vector has zero norm.
double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

using StyleFunction = std::function<Eigen::VectorXd(const Eigen::MatrixXd& beta_seq)>;
double style_sim(const Eigen::MatrixXd& beta_a, const Eigen::MatrixXd& beta_b,
                 const StyleFunction& phi);

struct MetricInputs {
  const std::vector<Image>* pred = nullptr;
  const std::vector<Image>* gt = nullptr;
};

struct AdapterOutcome {
  std::string status;  // "ok", "skipped" or "failed"
  double value = 0.0;
  std::string message;
};

// Metrics backed by external networks. Only the names in known_names() may be
// registered or queried.
class MetricRegistry {
 public:
  using Adapter = std::function<double(const MetricInputs&)>;

  static const std::vector<std::string>& known_names();
  void register_adapter(const std::string& name, Adapter fn);
  // Never throws for a known name: a missing adapter is "skipped" and an
  // adapter that throws is "failed".
  AdapterOutcome run(const std::string& name, const MetricInputs& inputs) const;

 private:
  std::map<std::string, Adapter> adapters_;
};

}  // namespace facedub
