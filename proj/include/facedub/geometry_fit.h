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

// Per-frame morphable-model coefficients for a video and their refinement
// against a landmark track.

#include "facedub/morphable_model.h"

#include <filesystem>
#include <vector>

namespace facedub {

struct FrameCoeffs {
  VectorXd alpha;
  VectorXd beta;
  PoseParams pose;

  bool operator==(const FrameCoeffs&) const = default;
};

struct CoeffTimeline {
  std::vector<FrameCoeffs> frames;
  double fps = 25.0;

  int size() const { return static_cast<int>(frames.size()); }
  int n_alpha() const { return frames.empty() ? 0 : static_cast<int>(frames[0].alpha.size()); }
  int n_beta() const { return frames.empty() ? 0 : static_cast<int>(frames[0].beta.size()); }
  VectorXd mean_alpha() const;
  // Throws std::invalid_argument if empty or the frames disagree on dims.
  void validate() const;
  bool operator==(const CoeffTimeline&) const = default;
};

// Packs each frame as one row (alpha, beta, rx, ry, rz, tx, ty, tz, scale).
nn::Matrix pack(const CoeffTimeline& timeline);
CoeffTimeline unpack(const nn::Matrix& rows, int n_alpha, int n_beta, double fps = 25.0);

struct LandmarkTrack {
  int height = 0;
  int width = 0;
  std::vector<nn::Matrix> frames;  // each K x 2, pixels

  int size() const { return static_cast<int>(frames.size()); }
  int num_points() const { return frames.empty() ? 0 : static_cast<int>(frames[0].rows()); }
};

// Pixel positions of model.landmark_indices for one frame.
nn::Matrix project_landmarks(const MorphableModel& model, const FrameCoeffs& c,
                             int height, int width);
LandmarkTrack project_landmarks(const MorphableModel& model,
                                const CoeffTimeline& timeline, int height, int width);

// Text formats.
//   coefficients: "facedub-coeffs 1 <n_alpha> <n_beta> <T> <fps>", then one
//   line per frame: index, alpha, beta, rx ry rz tx ty tz scale.
//   landmarks: "facedub-landmarks 1 <T> <K> <H> <W>", then one line per
//   frame: index, x0 y0 x1 y1 ...
// Readers throw DataError on malformed input.
void write_coeffs(const std::filesystem::path& path, const CoeffTimeline& timeline);
CoeffTimeline read_coeffs(const std::filesystem::path& path);
void write_landmarks(const std::filesystem::path& path, const LandmarkTrack& track);
LandmarkTrack read_landmarks(const std::filesystem::path& path);

// Ingests a coefficient file.
CoeffTimeline init_coeffs(const std::filesystem::path& coeff_file);
// Heuristic initialisation: per-frame pose from an affine alignment of the
// mean-shape landmarks to the observed ones, alpha = beta = 0.
CoeffTimeline init_coeffs(const LandmarkTrack& track, const MorphableModel& model,
                          double fps = 25.0);

// The losses below optionally write d(loss)/d(pack(timeline)) into `grad`
// (same shape as pack(timeline)). Norms are unsquared with a zero
// subgradient at the origin.

// sum_k sum_t ||(kp[t+1] - kp[t]) - (gt[t+1] - gt[t])|| +
// lambda * sum over interior t of (||lap(p)_t|| + ||lap(beta)_t||),
// lap(x)_t = x[t-1] - 2 x[t] + x[t+1].
double tempo_loss(const CoeffTimeline& timeline, const LandmarkTrack& gt,
                  const MorphableModel& model, double lambda = 0.2,
                  nn::Matrix* grad = nullptr);

// sum_t ||alpha_t - mean_alpha(init)|| + ||beta_t - beta_t^init|| + ||p_t - p_t^init||
double reg_loss(const CoeffTimeline& timeline, const CoeffTimeline& init,
                nn::Matrix* grad = nullptr);

// sum_t sum_k ||kp[t] - gt[t]||
double landmark_loss(const CoeffTimeline& timeline, const LandmarkTrack& gt,
                     const MorphableModel& model, nn::Matrix* grad = nullptr);

// Discrete second-difference energy of pose and beta over interior frames,
// sum_t ||lap(p)_t|| + ||lap(beta)_t||.
double laplacian_energy(const CoeffTimeline& timeline);

struct FitOptions {
  int iters = 200;
  double step = 1e-2;
  double lambda = 0.2;
  double w_reg = 1e-3;
  // Absolute landmark term; 0 leaves tempo + w_reg * reg.
  double w_lmk = 1.0;
  // Includes the delta term of tempo_loss. Off for per-frame fitting.
  bool temporal = true;
};

struct FitResult {
  CoeffTimeline timeline;
  std::vector<double> loss_trace;  // iters + 1 entries
};

double fit_objective(const CoeffTimeline& timeline, const CoeffTimeline& init,
                     const LandmarkTrack& gt, const MorphableModel& model,
                     const FitOptions& options, nn::Matrix* grad = nullptr);

// Adam with cosine step decay on (alpha, beta, angles, translation, log scale).
// A step that raises the objective is halved until it does not (at most ten
// times).
// Throws NumericError if the objective becomes non-finite.
FitResult optimize_coeffs(const CoeffTimeline& init, const LandmarkTrack& gt,
                          const MorphableModel& model, const FitOptions& options = {});

// Mean Euclidean landmark error in pixels.
double mean_reprojection_error(const CoeffTimeline& timeline, const LandmarkTrack& gt,
                               const MorphableModel& model);

}  // namespace facedub
