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

#include "gradcheck.h"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <stdexcept>

namespace facedub {
namespace {

Image random_image(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  Image img(c, h, w);
  for (double& v : img.data) v = u(rng);
  return img;
}

LandmarkTrack random_track(int t, int k, std::mt19937_64& rng) {
  LandmarkTrack track;
  track.height = track.width = 64;
  for (int i = 0; i < t; ++i) track.frames.push_back(testing::random_matrix(k, 2, rng, 10.0));
  return track;
}

TEST(Psnr, Examples) {
  std::mt19937_64 rng(1);
  const Image a = random_image(3, 8, 8, rng);
  EXPECT_EQ(psnr(a, a), 100.0);
  EXPECT_DOUBLE_EQ(psnr(Image(3, 4, 4, 0.0), Image(3, 4, 4, 1.0)), 0.0);
  const Image b = random_image(3, 8, 8, rng);
  double mse = 0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) mse += std::pow(a.at(c, y, x) - b.at(c, y, x), 2) / 192.0;
    }
  }
  EXPECT_NEAR(psnr(a, b), -10.0 * std::log10(mse), 1e-9);
  EXPECT_THROW(psnr(a, Image(3, 8, 7)), std::invalid_argument);
}

TEST(Ssim, IdenticalAndSymmetric) {
  std::mt19937_64 rng(2);
  const Image a = random_image(3, 16, 16, rng), b = random_image(3, 16, 16, rng);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-14);
  EXPECT_THROW(ssim(Image(1, 10, 20), Image(1, 10, 20)), std::invalid_argument);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  Image a(1, 16, 16), b(1, 16, 16);
  for (int y = 0; y < 16; ++y) {
    for (int x = 0; x < 16; ++x) {
      a.at(0, y, x) = (x + y) % 2;
      b.at(0, y, x) = 1 - a.at(0, y, x);
    }
  }
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, MatchesScikitImageReference) {
  // skimage.metrics.structural_similarity(a, b, gaussian_weights=True,
  // sigma=1.5, use_sample_covariance=False, data_range=1.0).
  Image a(1, 24, 20), b(1, 24, 20);
  for (int y = 0; y < 24; ++y) {
    for (int x = 0; x < 20; ++x) {
      a.at(0, y, x) = (std::sin(0.3 * x) + std::cos(0.2 * y) + 2) / 4;
      b.at(0, y, x) = a.at(0, y, x) * a.at(0, y, x);
    }
  }
  EXPECT_NEAR(ssim(a, b), 0.659856947767236, 1e-9);
}

TEST(Lmd, Examples) {
  std::mt19937_64 rng(3);
  const LandmarkTrack gt = random_track(4, 68, rng);
  const std::vector<int> slots = lip_landmark_slots();
  EXPECT_EQ(lmd(gt, gt, slots, 1.0), 0.0);
  LandmarkTrack shifted = gt;
  for (auto& f : shifted.frames) f.col(1).array() += 1.0;
  EXPECT_NEAR(lmd(shifted, gt, slots, 1.0), 1.0, 1e-12);

  const LandmarkTrack pred = random_track(4, 68, rng);
  LandmarkTrack p3 = pred, g3 = gt;
  for (auto& f : p3.frames) f *= 3.0;
  for (auto& f : g3.frames) f *= 3.0;
  EXPECT_NEAR(lmd(p3, g3, slots, 6.0), lmd(pred, gt, slots, 2.0), 1e-12);

  LandmarkTrack pt = pred, gtt = gt;
  for (auto& f : pt.frames) f.rowwise() += Eigen::RowVector2d(4, -2);
  for (auto& f : gtt.frames) f.rowwise() += Eigen::RowVector2d(4, -2);
  EXPECT_NEAR(lmd(pt, gtt, slots, 2.0), lmd(pred, gt, slots, 2.0), 1e-12);

  EXPECT_THROW(lmd(pred, random_track(4, 10, rng), slots, 1.0), std::invalid_argument);
  EXPECT_THROW(lmd(pred, gt, slots, 0.0), std::invalid_argument);
}

TEST(Lmd, InterocularNormaliser) {
  LandmarkTrack gt;
  gt.width = gt.height = 64;
  gt.frames.push_back(nn::Matrix::Zero(68, 2));
  EXPECT_EQ(interocular_distance(gt), 64.0);
  gt.frames[0](45, 0) = 30.0;
  EXPECT_EQ(interocular_distance(gt), 30.0);
}

TEST(StyleSim, CosineContract) {
  const StyleFunction mean_phi = [](const Eigen::MatrixXd& b) {
    return Eigen::VectorXd(b.colwise().mean().transpose());
  };
  Eigen::MatrixXd a(3, 2);
  a << 1, 2, 3, 4, 5, 7;
  Eigen::MatrixXd perm(3, 2);
  perm << 5, 7, 1, 2, 3, 4;
  EXPECT_NEAR(style_sim(a, a, mean_phi), 1.0, 1e-15);
  EXPECT_NEAR(style_sim(a, perm, mean_phi), 1.0, 1e-15);
  Eigen::MatrixXd c(2, 2);
  c << -1, 0.5, 0.2, -3;
  EXPECT_DOUBLE_EQ(style_sim(a, c, mean_phi), style_sim(c, a, mean_phi));
  EXPECT_GE(style_sim(a, c, mean_phi), -1.0);
  EXPECT_THROW(style_sim(a, Eigen::MatrixXd::Zero(2, 2), mean_phi), std::invalid_argument);
}

TEST(MetricRegistry, AdapterOutcomes) {
  MetricRegistry reg;
  const MetricInputs inputs;
  EXPECT_EQ(reg.run("fid", inputs).status, "skipped");
  reg.register_adapter("lpips", [](const MetricInputs&) { return 0.125; });
  const AdapterOutcome ok = reg.run("lpips", inputs);
  EXPECT_EQ(ok.status, "ok");
  EXPECT_EQ(ok.value, 0.125);
  reg.register_adapter("csim", [](const MetricInputs&) -> double {
    throw std::runtime_error("model weights missing");
  });
  const AdapterOutcome failed = reg.run("csim", inputs);
  EXPECT_EQ(failed.status, "failed");
  EXPECT_EQ(failed.message, "model weights missing");
  EXPECT_THROW(reg.run("bleu", inputs), std::invalid_argument);
  EXPECT_THROW(reg.register_adapter("bleu", nullptr), std::invalid_argument);
}

}  // namespace
}  // namespace facedub
