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

#include "facedub/geometry_gen.h"

#include "facedub/checkpoint.h"
#include "facedub/errors.h"
#include "gradcheck.h"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>

namespace facedub {
namespace {

using nn::Tensor;
using testing::grad_rel_error;
using testing::random_matrix;

Stage1Config small_config() {
  Stage1Config c;
  c.audio = {16, 8, 1, 200};
  c.n_self = 2;
  c.seed = 3;
  return c;
}

Vertices random_vertices(int n, std::mt19937_64& rng) { return Vertices(random_matrix(n, 3, rng)); }

TEST(GeometryGenerator, OutputShapeForAnyLength) {
  const MorphableModel model = make_toy_model(1);
  Stage1Model m(small_config());
  const Vertices tmpl = Stage1Model::template_vertices(model, Eigen::VectorXd::Zero(8));
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd betas = random_matrix(4, 8, rng, 0.3);
  for (int t : {1, 2, 7, 30}) {
    const Tensor out = m.generate(Tensor::constant(random_matrix(t, 16, rng)), betas, tmpl, model);
    EXPECT_EQ(out.rows(), t);
    EXPECT_EQ(out.cols(), 600);
    EXPECT_EQ(to_vertex_sequence(out.value()).size(), static_cast<std::size_t>(t));
  }
}

TEST(GeometryGenerator, TemplateIsZeroExpressionSynthesis) {
  const MorphableModel model = make_toy_model(2);
  std::mt19937_64 rng(2);
  const Eigen::VectorXd alpha = random_matrix(8, 1, rng);
  const Vertices v = Stage1Model::template_vertices(model, alpha);
  const Eigen::VectorXd flat = model.mean_shape + model.shape_basis * alpha;
  for (int i = 0; i < v.size(); ++i) {
    for (int a = 0; a < 3; ++a) EXPECT_NEAR(v.coords(i, a), flat(3 * i + a), 1e-12);
  }
}

TEST(GeometryGenerator, SingleTemplateRowCrossAttentionClosedForm) {
  std::mt19937_64 rng(3);
  nn::ParameterStore store;
  const Stage1Config cfg = small_config();
  GeometryGenerator gen(store, cfg, rng);
  const Tensor a = Tensor::constant(random_matrix(5, 16, rng));
  const Tensor tv = Tensor::constant(random_matrix(1, 16, rng));
  const nn::Matrix out = gen.cross_block(a, tv).value();
  const nn::Matrix row = tv.value() * gen.cross.wv.value() * gen.cross.wo.value();
  for (int t = 0; t < 5; ++t) {
    EXPECT_LT((out.row(t) - a.value().row(t) - row).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(gen.cross_block(a, Tensor::constant(random_matrix(2, 16, rng))), std::invalid_argument);
  EXPECT_THROW(gen(a, tv, Tensor::constant(random_matrix(1, 10, rng))), std::invalid_argument);
}

TEST(GeometryGenerator, DeterministicForward) {
  const MorphableModel model = make_toy_model(1);
  Stage1Model m1(small_config()), m2(small_config());
  std::mt19937_64 rng(4);
  const Tensor feats = Tensor::constant(random_matrix(6, 16, rng));
  const Eigen::MatrixXd betas = random_matrix(6, 8, rng, 0.3);
  const Vertices tmpl = Stage1Model::template_vertices(model, Eigen::VectorXd::Zero(8));
  EXPECT_EQ(m1.generate(feats, betas, tmpl, model).value(), m2.generate(feats, betas, tmpl, model).value());
}

TEST(MergeLowerUpper, IndexSetOracle) {
  const MorphableModel model = make_toy_model(1);
  std::mt19937_64 rng(5);
  const Vertices tgt = random_vertices(200, rng), gt = random_vertices(200, rng);
  const Vertices out = merge_lower_upper(tgt, gt, model);
  for (int i : model.upper_face_indices) EXPECT_EQ(out.coords.row(i), gt.coords.row(i));
  for (int i : model.lower_face_indices) EXPECT_EQ(out.coords.row(i), tgt.coords.row(i));
  EXPECT_EQ(merge_lower_upper(gt, gt, model), gt);
  EXPECT_THROW(merge_lower_upper(random_vertices(10, rng), gt, model), std::invalid_argument);
}

TEST(MergeLowerUpper, AllUpperModelReturnsGroundTruth) {
  MorphableModel model = make_toy_model(1);
  model.upper_face_indices.clear();
  for (int i = 0; i < model.num_vertices(); ++i) model.upper_face_indices.push_back(i);
  model.lower_face_indices.clear();
  std::mt19937_64 rng(6);
  const Vertices gt = random_vertices(200, rng);
  EXPECT_EQ(merge_lower_upper(random_vertices(200, rng), gt, model), gt);
}

TEST(BuildTargetGeometry, ComposesPerFramePncc) {
  const MorphableModel model = make_toy_model(1);
  std::mt19937_64 rng(7);
  std::vector<Vertices> seq;
  std::vector<PoseParams> poses;
  for (int t = 0; t < 3; ++t) {
    seq.push_back(synthesize_vertices(model, random_matrix(8, 1, rng, 0.3), random_matrix(8, 1, rng, 0.3)));
    PoseParams p;
    p.scale = 20;
    p.rotation = Eigen::Vector3d(0.05 * t, -0.1, 0.02);
    poses.push_back(p);
  }
  const auto maps = build_target_geometry(seq, poses, model, 48, 40);
  ASSERT_EQ(maps.size(), 3u);
  for (int t = 0; t < 3; ++t) {
    const PnccMap ref = render_pncc(pose_and_project(seq[t], poses[t], 48, 40), seq[t], model, 48, 40);
    EXPECT_EQ(maps[t].image.data, ref.image.data);
  }
  const auto again = build_target_geometry(seq, poses, model, 48, 40);
  for (int t = 0; t < 3; ++t) EXPECT_EQ(again[t].image.data, maps[t].image.data);
  EXPECT_THROW(build_target_geometry(seq, {poses[0]}, model, 48, 40), std::invalid_argument);
}

TEST(Stage1Loss, HandEvaluatedExamples) {
  const MorphableModel model = make_toy_model(1);
  std::mt19937_64 rng(8);
  const nn::Matrix gt = random_matrix(1, 600, rng);
  EXPECT_EQ(stage1_loss(Tensor::constant(gt), gt, model).item(), 0.0);
  nn::Matrix pred = gt;
  pred(0, 3 * model.lower_face_indices[4]) += 1.0;
  const double n_low = static_cast<double>(model.lower_face_indices.size());
  EXPECT_NEAR(stage1_loss(Tensor::constant(pred), gt, model).item(), 1.0 / (3 * n_low), 1e-15);
}

TEST(Stage1Loss, TemporalTermOnTwoFrames) {
  const MorphableModel model = make_toy_model(1);
  const nn::Matrix gt = nn::Matrix::Zero(2, 600);
  nn::Matrix pred = gt;
  pred(1, 3 * model.lower_face_indices[0] + 2) = 1.0;
  const double n = 3.0 * static_cast<double>(model.lower_face_indices.size());
  // MSE over 2n entries plus 0.1 x one unit delta over n entries.
  EXPECT_NEAR(stage1_loss(Tensor::constant(pred), gt, model).item(), 1.0 / (2 * n) + 0.1 / n, 1e-15);
}

TEST(Stage1Loss, UpperFaceInvariance) {
  const MorphableModel model = make_toy_model(1);
  std::mt19937_64 rng(9);
  const nn::Matrix gt = random_matrix(4, 600, rng), pred = random_matrix(4, 600, rng);
  nn::Matrix changed = pred;
  for (int t = 0; t < 4; ++t) {
    for (int i : model.upper_face_indices) {
      for (int a = 0; a < 3; ++a) changed(t, 3 * i + a) += 100.0 * (t + 1);
    }
  }
  EXPECT_EQ(stage1_loss(Tensor::constant(changed), gt, model).item(),
            stage1_loss(Tensor::constant(pred), gt, model).item());
  EXPECT_THROW(stage1_loss(Tensor::constant(pred), random_matrix(3, 600, rng), model), std::invalid_argument);
}

TEST(Stage1EndToEnd, GradientsMatchFiniteDifferences) {
  const MorphableModel model = make_toy_model(1);
  Stage1Model m(small_config());
  std::mt19937_64 rng(10);
  // Two frames at 25 fps.
  Tensor samples = Tensor::parameter(random_matrix(1280, 1, rng, 0.3));
  const Eigen::MatrixXd betas = random_matrix(5, 8, rng, 0.3);
  const Vertices tmpl = Stage1Model::template_vertices(model, Eigen::VectorXd::Zero(8));
  const nn::Matrix gt = random_matrix(2, 600, rng, 0.1) +
                        flatten_vertices(tmpl).replicate(2, 1);
  auto f = [&] { return stage1_loss(m.generate(m.audio(samples, 25), betas, tmpl, model), gt, model); };
  ASSERT_EQ(m.audio(samples, 25).rows(), 2);
  EXPECT_LT(grad_rel_error(f, samples, 1e-5, 40), 1e-3);
  int checked = 0;
  for (const auto& [name, p] : m.store().all()) {
    if (name.find("attn") == std::string::npos && name.find("cross") == std::string::npos &&
        name.find("inject") == std::string::npos) {
      continue;
    }
    if (name.find("ln") != std::string::npos) continue;
    EXPECT_LT(grad_rel_error(f, p, 1e-5, 16), 1e-3) << name;
    ++checked;
  }
  EXPECT_GE(checked, 4 * 4);
}

TEST(Stage1Checkpoint, RoundTripWithOptimizerState) {
  const auto path = std::filesystem::temp_directory_path() / "facedub_stage1_test.fdc";
  Stage1Model m(small_config());
  nn::Adam adam(m.store().list());
  const MorphableModel model = make_toy_model(1);
  std::mt19937_64 rng(11);
  const Vertices tmpl = Stage1Model::template_vertices(model, Eigen::VectorXd::Zero(8));
  const Tensor out = m.generate(Tensor::constant(random_matrix(3, 16, rng)), random_matrix(3, 8, rng), tmpl, model);
  stage1_loss(out, nn::Matrix::Zero(3, 600), model).backward();
  adam.step(1e-3);
  save_stage1(path, m, &adam, {{"epoch", 3}});
  EXPECT_EQ(read_stage1_config(path), small_config());
  const auto loaded = load_stage1(path);
  EXPECT_EQ(weights_hash(loaded->store()), weights_hash(m.store()));

  Stage1Model resumed(read_stage1_config(path));
  nn::Adam adam2(resumed.store().list());
  const auto meta = load_checkpoint(path, "stage1", 1, resumed.store(), &adam2);
  EXPECT_EQ(meta.at("epoch").get<int>(), 3);
  EXPECT_EQ(adam2.steps(), 1);
  EXPECT_THROW(load_checkpoint(path, "stage2", 1, resumed.store()), DataError);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace facedub
