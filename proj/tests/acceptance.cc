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

// Acceptance checks, one PASS/FAIL line per criterion. Run all of them, or a
// single one with --criterion N.

#include "alg1_oracle.h"
#include "dual_attention_oracle.h"
#include "gradcheck.h"

#include "facedub/checkpoint.h"
#include "facedub/errors.h"
#include "facedub/pipeline.h"
#include "facedub/refselect.h"

#include <CLI11.hpp>
#include <Eigen/Geometry>

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

namespace facedub {
namespace {

namespace fs = std::filesystem;
using nn::Matrix;
using nn::Tensor;
using testing::random_matrix;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(double v, const char* f = "%.3g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double rel_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-12);
}

// ---- independent oracles -------------------------------------------------

Matrix oracle_attention(const Matrix& q, const Matrix& k, const Matrix& v) {
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  for (int i = 0; i < q.rows(); ++i) {
    std::vector<double> logits;
    for (int j = 0; j < k.rows(); ++j) {
      double dot = 0;
      for (int c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      logits.push_back(dot / std::sqrt(static_cast<double>(q.cols())));
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (int j = 0; j < k.rows(); ++j) {
      for (int c = 0; c < v.cols(); ++c) out(i, c) += logits[static_cast<std::size_t>(j)] / z * v(j, c);
    }
  }
  return out;
}

// Landmark pixels from first principles: linear model, Z-Y-X Euler rotation
// built from axis rotations, translation, scale about the image centre.
std::vector<std::array<double, 2>> oracle_keypoints(const MorphableModel& m, const FrameCoeffs& f, int h, int w) {
  const Eigen::Matrix3d r = (Eigen::AngleAxisd(f.pose.rotation.z(), Eigen::Vector3d::UnitZ()) *
                             Eigen::AngleAxisd(f.pose.rotation.y(), Eigen::Vector3d::UnitY()) *
                             Eigen::AngleAxisd(f.pose.rotation.x(), Eigen::Vector3d::UnitX()))
                                .toRotationMatrix();
  std::vector<std::array<double, 2>> out;
  for (int idx : m.landmark_indices) {
    Eigen::Vector3d p;
    for (int a = 0; a < 3; ++a) {
      double v = m.mean_shape(3 * idx + a);
      for (int j = 0; j < m.n_alpha(); ++j) v += m.shape_basis(3 * idx + a, j) * f.alpha(j);
      for (int j = 0; j < m.n_beta(); ++j) v += m.expr_basis(3 * idx + a, j) * f.beta(j);
      p(a) = v;
    }
    const Eigen::Vector3d q = r * p + f.pose.translation;
    out.push_back({w / 2.0 + f.pose.scale * q.x(), h / 2.0 + f.pose.scale * q.y()});
  }
  return out;
}

std::vector<double> pose7(const PoseParams& p) {
  return {p.rotation.x(), p.rotation.y(), p.rotation.z(), p.translation.x(), p.translation.y(), p.translation.z(), p.scale};
}

double norm_of_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

double oracle_tempo(const CoeffTimeline& tl, const LandmarkTrack& gt, const MorphableModel& m, double lambda) {
  const int t = tl.size();
  std::vector<std::vector<std::array<double, 2>>> kp;
  for (const auto& f : tl.frames) kp.push_back(oracle_keypoints(m, f, gt.height, gt.width));
  double delta = 0;
  for (int s = 0; s + 1 < t; ++s) {
    for (std::size_t k = 0; k < m.landmark_indices.size(); ++k) {
      const int kk = static_cast<int>(k);
      const double dx = (kp[s + 1][k][0] - kp[s][k][0]) - (gt.frames[s + 1](kk, 0) - gt.frames[s](kk, 0));
      const double dy = (kp[s + 1][k][1] - kp[s][k][1]) - (gt.frames[s + 1](kk, 1) - gt.frames[s](kk, 1));
      delta += std::sqrt(dx * dx + dy * dy);
    }
  }
  double lap = 0;
  for (int s = 1; s + 1 < t; ++s) {
    auto second = [&](const std::vector<double>& a, const std::vector<double>& b, const std::vector<double>& c) {
      std::vector<double> d(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - 2 * b[i] + c[i];
      return norm_of_diff(d, std::vector<double>(a.size(), 0.0));
    };
    lap += second(pose7(tl.frames[s - 1].pose), pose7(tl.frames[s].pose), pose7(tl.frames[s + 1].pose));
    lap += second(to_vec(tl.frames[s - 1].beta), to_vec(tl.frames[s].beta), to_vec(tl.frames[s + 1].beta));
  }
  return delta + lambda * lap;
}

double oracle_reg(const CoeffTimeline& tl, const CoeffTimeline& init) {
  std::vector<double> abar(static_cast<std::size_t>(init.n_alpha()), 0.0);
  for (const auto& f : init.frames) {
    for (int j = 0; j < init.n_alpha(); ++j) abar[static_cast<std::size_t>(j)] += f.alpha(j) / init.size();
  }
  double total = 0;
  for (int s = 0; s < tl.size(); ++s) {
    total += norm_of_diff(to_vec(tl.frames[s].alpha), abar);
    total += norm_of_diff(to_vec(tl.frames[s].beta), to_vec(init.frames[s].beta));
    total += norm_of_diff(pose7(tl.frames[s].pose), pose7(init.frames[s].pose));
  }
  return total;
}

CoeffTimeline random_timeline(const MorphableModel& model, int t_len, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CoeffTimeline tl;
  for (int t = 0; t < t_len; ++t) {
    FrameCoeffs f;
    f.alpha = VectorXd(model.n_alpha());
    f.beta = VectorXd(model.n_beta());
    for (int j = 0; j < f.alpha.size(); ++j) f.alpha(j) = 0.3 * n(rng);
    for (int j = 0; j < f.beta.size(); ++j) f.beta(j) = 0.3 * n(rng);
    f.pose.rotation = Vector3d(0.2 * n(rng), 0.2 * n(rng), 0.2 * n(rng));
    f.pose.translation = Vector3d(0.1 * n(rng), 0.1 * n(rng), 0.1 * n(rng));
    f.pose.scale = 20 + n(rng);
    tl.frames.push_back(f);
  }
  return tl;
}

LandmarkTrack noisy(LandmarkTrack track, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& f : track.frames) {
    for (nn::Index i = 0; i < f.size(); ++i) f.data()[i] += n(rng);
  }
  return track;
}

testing::OracleReference to_oracle(const EncodedReference& r) {
  return {r.geometry.value(), r.texture.value(), {r.lip.data(), r.lip.data() + r.lip.size()}};
}

testing::OracleBranch to_oracle(const Renderer::Branch& b) {
  return {b.positions.value(), b.wq.value(), b.wk.value()};
}

double dual_attention_error(const Renderer& r, const Tensor& g, const std::vector<EncodedReference>& face,
                            const std::vector<EncodedReference>& lip, const Matrix& mask) {
  std::vector<testing::OracleReference> of, ol;
  for (const auto& x : face) of.push_back(to_oracle(x));
  for (const auto& x : lip) ol.push_back(to_oracle(x));
  const Matrix expected = testing::oracle_dual_attention(g.value(), of, ol, to_oracle(r.face_branch),
                                                         to_oracle(r.lip_branch), {mask.data(), mask.data() + mask.size()});
  return rel_error(r.dual_attention(g, face, lip, mask).value(), expected);
}

// ---- helpers --------------------------------------------------------------

PipelineConfig toy_config(int size) {
  PipelineConfig c;
  c.d = 32;
  c.tcn_channels = 16;
  c.transformer_layers = 2;
  c.n_self = 4;
  c.channels = 32;
  c.height = size;
  c.width = size;
  return c;
}

Dataset make_dataset(const fs::path& dir, const PipelineConfig& c, int speakers, int clips, double seconds) {
  fs::remove_all(dir);
  DatasetSpec spec;
  spec.speakers = default_speakers(speakers);
  spec.clips_per_speaker = clips;
  spec.duration_s = seconds;
  synth_dataset(spec, c, dir);
  return open_dataset(dir);
}

// Global relative error of analytic against central-difference gradients over
// a sample of coordinates from every parameter.
double combined_grad_error(const std::function<Tensor()>& loss, const std::vector<Tensor>& params, int per_param,
                           std::mt19937_64& rng) {
  for (Tensor p : params) p.zero_grad();
  loss().backward();
  double diff = 0, na = 0, nn_ = 0;
  for (Tensor p : params) {
    const Matrix analytic = p.grad();
    std::uniform_int_distribution<nn::Index> pick(0, p.value().size() - 1);
    for (int s = 0; s < per_param; ++s) {
      const nn::Index c = pick(rng);
      double& x = p.mutable_value().data()[c];
      const double saved = x, h = 1e-5;
      x = saved + h;
      const double up = loss().item();
      x = saved - h;
      const double down = loss().item();
      x = saved;
      const double numeric = (up - down) / (2 * h);
      diff += std::pow(analytic.data()[c] - numeric, 2);
      na += std::pow(analytic.data()[c], 2);
      nn_ += numeric * numeric;
    }
  }
  for (Tensor p : params) p.zero_grad();
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn_), 1e-12});
}

double packed_grad_error(const CoeffTimeline& tl, const std::function<double(const CoeffTimeline&, Matrix*)>& loss) {
  Matrix analytic;
  loss(tl, &analytic);
  const Matrix rows = pack(tl);
  Matrix numeric(rows.rows(), rows.cols());
  const double h = 1e-5;
  for (nn::Index i = 0; i < rows.size(); ++i) {
    Matrix up = rows, down = rows;
    up.data()[i] += h;
    down.data()[i] -= h;
    numeric.data()[i] = (loss(unpack(up, tl.n_alpha(), tl.n_beta()), nullptr) -
                         loss(unpack(down, tl.n_alpha(), tl.n_beta()), nullptr)) / (2 * h);
  }
  return (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
}

// ---- criteria -------------------------------------------------------------

Outcome equation_oracles(const fs::path&) {
  Outcome out;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> small(1, 6);

  double worst = 0;
  for (int n = 0; n < 100; ++n) {
    const int d = small(rng);
    const Matrix q = random_matrix(small(rng), d, rng), k = random_matrix(small(rng) + 1, d, rng);
    const Matrix v = random_matrix(k.rows(), small(rng), rng);
    const Matrix got = attention_core<double>(Eigen::MatrixXd(q), Eigen::MatrixXd(k), Eigen::MatrixXd(v));
    worst = std::max(worst, rel_error(got, oracle_attention(q, k, v)));
  }
  out.check(worst < 1e-6, "attention_core 100 instances, max rel " + fmt(worst));

  const MorphableModel model = make_toy_model(5);
  std::uniform_int_distribution<int> len(2, 6);
  double worst_tempo = 0, worst_reg = 0;
  for (int n = 0; n < 100; ++n) {
    const int t = len(rng);
    const CoeffTimeline tl = random_timeline(model, t, rng), init = random_timeline(model, t, rng);
    const LandmarkTrack gt = noisy(project_landmarks(model, init, 64, 64), 2.0, rng);
    const double lambda = std::uniform_real_distribution<double>(0, 1)(rng);
    const double a = tempo_loss(tl, gt, model, lambda), b = oracle_tempo(tl, gt, model, lambda);
    worst_tempo = std::max(worst_tempo, std::abs(a - b) / std::abs(b));
    const double c = reg_loss(tl, init), e = oracle_reg(tl, init);
    worst_reg = std::max(worst_reg, std::abs(c - e) / std::abs(e));
  }
  out.check(worst_tempo < 1e-6, "tempo_loss 100 instances, max rel " + fmt(worst_tempo));
  out.check(worst_reg < 1e-6, "reg_loss 100 instances, max rel " + fmt(worst_reg));

  RendererConfig rc;
  rc.channels = 4;
  rc.height = 16;
  rc.width = 16;
  Renderer r(rc);
  const int hw = 16;
  std::uniform_real_distribution<double> u(0, 1);
  double worst_dual = 0;
  int fallbacks = 0;
  for (int n = 0; n < 100; ++n) {
    for (Renderer::Branch* b : {&r.lip_branch, &r.face_branch}) {
      b->positions.mutable_value() = random_matrix(hw, 4, rng, 0.5);
      b->wq.mutable_value() = random_matrix(4, 4, rng, 0.7);
      b->wk.mutable_value() = random_matrix(4, 4, rng, 0.7);
    }
    const bool no_lips = n % 5 == 0;
    fallbacks += no_lips;
    auto make_refs = [&](int count) {
      std::vector<EncodedReference> refs;
      for (int i = 0; i < count; ++i) {
        Matrix lip(hw, 1);
        for (int p = 0; p < hw; ++p) lip(p, 0) = (no_lips || u(rng) < 0.6) ? 0.0 : u(rng);
        refs.push_back({Tensor::constant(random_matrix(hw, 4, rng)), Tensor::constant(random_matrix(hw, 4, rng)), lip});
      }
      return refs;
    };
    const auto face = make_refs(1 + n % 3), lip = make_refs(1 + (n / 3) % 3);
    Matrix mask(hw, 1);
    for (int p = 0; p < hw; ++p) mask(p, 0) = u(rng);
    worst_dual = std::max(worst_dual, dual_attention_error(r, Tensor::constant(random_matrix(hw, 4, rng)), face, lip, mask));
  }
  out.check(worst_dual < 1e-6, "dual_attention 100 instances (" + std::to_string(fallbacks) +
                                   " without lip positions), max rel " + fmt(worst_dual));
  return out;
}

Outcome gradient_suite(const fs::path&) {
  Outcome out;
  std::mt19937_64 rng(202);
  const MorphableModel model = make_toy_model(1);

  double fit_worst = 0;
  for (int trial = 0; trial < 3; ++trial) {
    const CoeffTimeline tl = random_timeline(model, 4, rng), init = random_timeline(model, 4, rng);
    const LandmarkTrack gt = noisy(project_landmarks(model, init, 64, 64), 2.0, rng);
    fit_worst = std::max({fit_worst,
                          packed_grad_error(tl, [&](const CoeffTimeline& c, Matrix* g) { return tempo_loss(c, gt, model, 0.2, g); }),
                          packed_grad_error(tl, [&](const CoeffTimeline& c, Matrix* g) { return reg_loss(c, init, g); }),
                          packed_grad_error(tl, [&](const CoeffTimeline& c, Matrix* g) { return landmark_loss(c, gt, model, g); })});
  }
  out.check(fit_worst < 1e-4, "tempo/reg/landmark losses " + fmt(fit_worst));

  Tensor pred1 = Tensor::parameter(random_matrix(3, 600, rng, 0.2));
  const Matrix gt1 = random_matrix(3, 600, rng, 0.2);
  const double e_s1 = testing::grad_rel_error([&] { return stage1_loss(pred1, gt1, model); }, pred1);
  Tensor pred2 = Tensor::parameter(random_matrix(64, 3, rng));
  const Matrix gt2 = random_matrix(64, 3, rng);
  const double e_s2 = testing::grad_rel_error([&] { return stage2_loss(pred2, gt2); }, pred2);
  Tensor emb = Tensor::parameter(random_matrix(6, 4, rng));
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  const double e_sc = testing::grad_rel_error([&] { return supervised_contrastive_loss(emb, labels, 0.1); }, emb);
  const double loss_worst = std::max({e_s1, e_s2, e_sc});
  out.check(loss_worst < 1e-4, "stage1/stage2/contrastive losses " + fmt(loss_worst));

  Tensor q = Tensor::parameter(random_matrix(3, 4, rng)), k = Tensor::parameter(random_matrix(5, 4, rng));
  Tensor v = Tensor::parameter(random_matrix(5, 2, rng));
  const Tensor w = Tensor::constant(random_matrix(3, 2, rng));
  auto attn = [&] { return nn::sum(nn::mul(nn::attention(q, k, v), w)); };
  const double e_attn = std::max({testing::grad_rel_error(attn, q), testing::grad_rel_error(attn, k), testing::grad_rel_error(attn, v)});
  out.check(e_attn < 1e-4, "attention_core " + fmt(e_attn));

  Stage1Config s1;
  s1.audio = {16, 8, 1, 200};
  s1.n_self = 2;
  s1.seed = 3;
  Stage1Model m(s1);
  Tensor samples = Tensor::parameter(random_matrix(1280, 1, rng, 0.3));
  const Eigen::MatrixXd betas = random_matrix(5, 8, rng, 0.3);
  const Vertices tmpl = Stage1Model::template_vertices(model, Eigen::VectorXd::Zero(8));
  const Matrix gt_v = random_matrix(2, 600, rng, 0.1) + flatten_vertices(tmpl).replicate(2, 1);
  auto stage1_path = [&] { return stage1_loss(m.generate(m.audio(samples, 25), betas, tmpl, model), gt_v, model); };
  std::vector<Tensor> params1 = m.store().list();
  params1.push_back(samples);
  const double e_p1 = combined_grad_error(stage1_path, params1, 4, rng);
  out.check(e_p1 < 1e-3, "stage-1 end to end over " + std::to_string(params1.size()) + " tensors " + fmt(e_p1));

  RendererConfig rc;
  rc.channels = 4;
  rc.height = 16;
  rc.width = 16;
  Renderer r(rc);
  for (Tensor p : r.store().list()) p.mutable_value() += random_matrix(p.rows(), p.cols(), rng, 0.1);
  auto geometry = [&](double jaw) {
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(8);
    beta(0) = jaw;
    const Vertices vv = synthesize_vertices(model, Eigen::VectorXd::Zero(8), beta);
    PoseParams pose;
    pose.scale = 5.5;
    return render_pncc(pose_and_project(vv, pose, 16, 16), vv, model, 16, 16);
  };
  auto random_image = [&] {
    Image img(3, 16, 16);
    for (double& x : img.data) x = std::uniform_real_distribution<double>(0, 1)(rng);
    return img;
  };
  const PnccMap tgt = geometry(0.5), ref_g = geometry(0.0), ref_g2 = geometry(1.0);
  const Image ref_f = random_image(), ref_f2 = random_image();
  const Matrix gt_img = to_rows(random_image());
  auto stage2_path = [&] {
    const std::vector<EncodedReference> refs{r.encode_reference(ref_g, ref_f, model), r.encode_reference(ref_g2, ref_f2, model)};
    return stage2_loss(r.render(tgt, refs, refs, model), gt_img);
  };
  const double e_p2 = combined_grad_error(stage2_path, r.store().list(), 8, rng);
  out.check(e_p2 < 1e-3, "stage-2 end to end over " + std::to_string(r.store().list().size()) + " tensors " + fmt(e_p2));
  return out;
}

Outcome algorithm1(const fs::path&) {
  Outcome out;
  const int t = 200;
  int train_face_ok = 0, train_lip_ok = 0;
  std::vector<int> hits(t + 1, 0);
  for (int i = 1; i <= t; ++i) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const ReferenceSet refs = training_strategy(i, t, 5, 5, seed * 1000 + static_cast<std::uint64_t>(i));
      train_face_ok += refs.face_indices == testing::oracle_training_faces(i, t, 5);
      const std::set<int> distinct(refs.lip_indices.begin(), refs.lip_indices.end());
      train_lip_ok += refs.lip_indices.size() == 5 && distinct.size() == 5 && *distinct.begin() >= 1 &&
                      *distinct.rbegin() <= t;
      for (int x : refs.lip_indices) ++hits[static_cast<std::size_t>(x)];
    }
  }
  out.check(train_face_ok == 5 * t, "training faces equal the oracle for " + std::to_string(train_face_ok) + "/1000 draws");
  out.check(train_lip_ok == 5 * t, "training lips distinct and in range for " + std::to_string(train_lip_ok) + "/1000 draws");
  // 5000 uniform draws over 200 frames: 25 expected per frame.
  double chi2 = 0;
  for (int f = 1; f <= t; ++f) chi2 += std::pow(hits[static_cast<std::size_t>(f)] - 25.0, 2) / 25.0;
  out.check(chi2 < 280, "lip draw uniformity chi2(199 dof) " + fmt(chi2));

  const MorphableModel model = make_toy_model(1);
  ClipOptions o;
  o.duration_s = 8.0;
  o.render_frames = false;
  const SyntheticClip clip = synthesize_clip(model, default_speakers(1)[0], o);
  std::vector<Vertices> canonical;
  std::vector<double> openings;
  for (const auto& f : clip.coeffs.frames) {
    canonical.push_back(synthesize_vertices(model, f.alpha, f.beta));
    openings.push_back(mouth_opening_size(canonical.back(), model));
  }
  std::mt19937_64 rng(303);
  std::vector<double> tied(t);
  for (double& x : tied) x = std::round(std::uniform_real_distribution<double>(0, 1)(rng) * 20) / 20;
  int infer_ok = 0;
  const auto lips = testing::oracle_inference_lips(openings, 25), tied_lips = testing::oracle_inference_lips(tied, 25);
  for (int i = 1; i <= t; ++i) {
    const ReferenceSet a = inference_strategy(i, canonical, model, 5, 25);
    const ReferenceSet b = inference_strategy(i, tied, 5, 25);
    const auto faces = testing::oracle_inference_faces(i, t, 5);
    infer_ok += a.face_indices == faces && a.lip_indices == lips && b.face_indices == faces && b.lip_indices == tied_lips;
  }
  out.check(infer_ok == t, "inference strategy equals the oracle for " + std::to_string(infer_ok) + "/200 frames");

  const ReferenceSet dt = training_strategy(100, t), di = inference_strategy(100, openings);
  const PipelineConfig pc;
  out.check(dt.face_indices.size() == 5 && dt.lip_indices.size() == 5 && di.face_indices.size() == 5 &&
                di.lip_indices.size() == 25 && pc.n_f_train == 5 && pc.n_l_train == 5 && pc.n_f_infer == 5 &&
                pc.n_l_infer == 25,
            "defaults N_f=N_l=5 train, N_f=5/N_l=25 infer");
  return out;
}

Outcome geometry_fit_recovery(const fs::path&) {
  Outcome out;
  const MorphableModel model = make_toy_model(1);
  ClipOptions o;
  o.height = 256;
  o.width = 256;
  o.render_frames = false;
  const SyntheticClip clip = synthesize_clip(model, default_speakers(1)[0], o);
  const CoeffTimeline init = init_coeffs(clip.landmarks, model);
  const FitResult r = optimize_coeffs(init, clip.landmarks, model);
  const double before = mean_reprojection_error(init, clip.landmarks, model);
  const double after = mean_reprojection_error(r.timeline, clip.landmarks, model);
  int decreasing = 0;
  for (std::size_t i = 1; i < r.loss_trace.size(); ++i) decreasing += r.loss_trace[i] <= r.loss_trace[i - 1];
  const double frac = static_cast<double>(decreasing) / static_cast<double>(r.loss_trace.size() - 1);
  out.check(clip.coeffs.size() == 100, std::to_string(clip.coeffs.size()) + " frames at 256x256");
  out.check(after < 1.0, "reprojection error " + fmt(before) + " px -> " + fmt(after) + " px");
  out.check(frac >= 0.95, "loss decreased on " + fmt(100 * frac) + "% of iterations");
  return out;
}

Outcome stage1_overfit(const fs::path& work) {
  Outcome out;
  PipelineConfig c = toy_config(64);
  c.stage1_epochs = 200;
  const Dataset d = make_dataset(work / "c5_data", c, 1, 1, 4.0);
  const TrainSummary s = train_stage1(c, d, work / "c5_run");
  const auto& trace = s.loss_trace;
  const double smoothed = std::accumulate(trace.end() - 5, trace.end(), 0.0) / 5.0;
  const double ratio = smoothed / trace.front();
  out.check(s.epochs == 200 && trace.size() == 200, std::to_string(s.epochs) + " epochs on 100 frames");
  out.check(ratio < 0.1, "smoothed final loss " + fmt(smoothed) + " is " + fmt(100 * ratio) + "% of epoch 1 (" +
                             fmt(trace.front()) + ")");
  return out;
}

Outcome stage2_overfit(const fs::path& work) {
  Outcome out;
  PipelineConfig c = toy_config(64);
  c.stage2_epochs = 300;
  c.stage2_target_psnr = 28.5;
  const Dataset d = make_dataset(work / "c6_data", c, 1, 1, 4.0);
  const TrainSummary s = train_stage2(c, d, work / "c6_run");
  const auto trained = load_stage2(work / "c6_run" / "stage2.fdc");
  const MorphableModel model = load_model(d.root / "model.fdc");
  const double p = stage2_training_psnr(*trained, c, d, model);
  out.check(p >= 28.0, "training PSNR " + fmt(p, "%.2f") + " dB after " + std::to_string(s.epochs) + " epochs");

  // Mask identities and the loop oracle on the trained weights.
  nn::NoGrad no_grad;
  const SyntheticClip clip = read_clip(d.clips[0].dir);
  auto encoded = [&](int i) {
    const FrameCoeffs& f = clip.coeffs.frames[static_cast<std::size_t>(i)];
    const Vertices v = synthesize_vertices(model, f.alpha, f.beta);
    return trained->encode_reference(render_pncc(pose_and_project(v, f.pose, 64, 64), v, model, 64, 64),
                                     clip.frames[static_cast<std::size_t>(i)], model);
  };
  bool identities = true;
  double worst = 0;
  for (int i = 10; i < 100; i += 20) {
    const EncodedReference tgt = encoded(i);
    const std::vector<EncodedReference> face{encoded(i - 4), encoded(i - 2), encoded(i + 2)};
    const std::vector<EncodedReference> lip{encoded((i * 7) % 100), encoded((i * 13) % 100)};
    const Matrix ones = Matrix::Ones(tgt.lip.rows(), 1), zeros = Matrix::Zero(tgt.lip.rows(), 1);
    identities = identities && trained->dual_attention(tgt.geometry, face, lip, ones).value() ==
                                   trained->branch(true, tgt.geometry, lip).value();
    identities = identities && trained->dual_attention(tgt.geometry, face, lip, zeros).value() ==
                                   trained->branch(false, tgt.geometry, face).value();
    worst = std::max(worst, dual_attention_error(*trained, tgt.geometry, face, lip, tgt.lip));
  }
  out.check(identities, "M=1 gives Lip-Attention and M=0 gives Face-Attention exactly on trained weights");
  out.check(worst < 1e-6, "trained dual attention against the oracle, max rel " + fmt(worst));
  return out;
}

Outcome style_separation(const fs::path& work) {
  Outcome out;
  PipelineConfig c = toy_config(32);
  c.stage1_epochs = 40;
  c.style_weight = 1.0;
  const int speakers = 4;
  const Dataset d = make_dataset(work / "c7_data", c, speakers, 6, 4.0);
  train_stage1(c, d, work / "c7_run");
  const auto m = load_stage1(work / "c7_run" / "stage1.fdc");
  const MorphableModel model = load_model(d.root / "model.fdc");
  nn::NoGrad no_grad;

  // Held-out clips of the same speakers.
  std::vector<std::vector<Eigen::MatrixXd>> betas(speakers);
  for (int s = 0; s < speakers; ++s) {
    for (int k = 0; k < 6; ++k) {
      ClipOptions o;
      o.render_frames = false;
      o.clip = 100 + static_cast<std::uint64_t>(k);
      const SyntheticClip clip = synthesize_clip(model, default_speakers(speakers)[static_cast<std::size_t>(s)], o);
      Eigen::MatrixXd b(clip.coeffs.size(), model.n_beta());
      for (int t = 0; t < clip.coeffs.size(); ++t) b.row(t) = clip.coeffs.frames[static_cast<std::size_t>(t)].beta.transpose();
      betas[static_cast<std::size_t>(s)].push_back(b);
    }
  }
  const StyleFunction phi = [&](const Eigen::MatrixXd& b) -> Eigen::VectorXd {
    return m->style(b, model).value().row(0).transpose();
  };
  double intra = 0, inter = 0;
  int n_intra = 0, n_inter = 0;
  for (int s = 0; s < speakers; ++s) {
    for (int a = 0; a < 6; ++a) {
      for (int t = s; t < speakers; ++t) {
        for (int b = 0; b < 6; ++b) {
          if (s == t && b <= a) continue;
          const double sim = style_sim(betas[s][a], betas[t][b], phi);
          if (s == t) {
            intra += sim;
            ++n_intra;
          } else {
            inter += sim;
            ++n_inter;
          }
        }
      }
    }
  }
  intra /= n_intra;
  inter /= n_inter;
  out.check(intra - inter > 0.1, "held-out StyleSim intra " + fmt(intra) + " - inter " + fmt(inter) + " = " +
                                     fmt(intra - inter) + " over 4 speakers x 6 clips");

  bool exact = true;
  std::mt19937_64 rng(707);
  for (const auto& per_speaker : betas) {
    for (const auto& b : per_speaker) {
      std::vector<int> perm(static_cast<std::size_t>(b.rows()));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      Eigen::MatrixXd shuffled(b.rows(), b.cols());
      for (std::size_t i = 0; i < perm.size(); ++i) shuffled.row(static_cast<nn::Index>(i)) = b.row(perm[i]);
      exact = exact && phi(shuffled) == phi(b);
    }
  }
  out.check(exact, "extract_style is bitwise invariant to frame permutation on 24 clips");
  return out;
}

Outcome structural_invariants(const fs::path& work) {
  Outcome out;
  PipelineConfig c = toy_config(64);
  c.d = 16;
  c.tcn_channels = 8;
  c.n_self = 2;
  c.channels = 16;
  c.stage1_epochs = 3;
  c.stage2_epochs = 2;
  c.stage2_eval_every = 2;
  const Dataset d = make_dataset(work / "c8_data", c, 2, 1, 2.0);
  train_stage1(c, d, work / "c8_run");
  train_stage2(c, d, work / "c8_run");
  const MorphableModel model = load_pipeline_model(c);

  // Target audio from the other speaker, longer than the reference video.
  Waveform audio = read_wav(d.clips[1].dir / "audio.wav");
  audio.samples.insert(audio.samples.end(), audio.samples.begin(), audio.samples.begin() + 16000);
  write_wav(work / "c8_audio.wav", audio);
  const fs::path ref = d.clips[0].dir, s1 = work / "c8_run" / "stage1.fdc", s2 = work / "c8_run" / "stage2.fdc";
  const DubResult a = dub(c, ref, work / "c8_audio.wav", s1, s2, work / "c8_out_a", true);
  const DubResult b = dub(c, ref, work / "c8_audio.wav", s1, s2, work / "c8_out_b");

  // Recompute the stage-1 path to compare the upper face and the geometry maps.
  const CoeffTimeline coeffs = read_coeffs(ref / "coeffs.txt");
  const auto m = load_stage1(s1);
  nn::NoGrad no_grad;
  Eigen::MatrixXd betas(coeffs.size(), model.n_beta());
  for (int t = 0; t < coeffs.size(); ++t) betas.row(t) = coeffs.frames[static_cast<std::size_t>(t)].beta.transpose();
  const Matrix gen = m->generate(m->audio(audio, c.fps), betas, Stage1Model::template_vertices(model, coeffs.mean_alpha()), model).value();
  bool upper_exact = true, lower_exact = true, maps_match = true, range_ok = true, background_ok = true;
  std::size_t covered = 0, total = 0;
  for (int k = 0; k < a.frames; ++k) {
    const FrameCoeffs& f = coeffs.frames[static_cast<std::size_t>(a.frame_map[static_cast<std::size_t>(k)])];
    const Vertices gt = synthesize_vertices(model, f.alpha, f.beta);
    const Vertices pred = unflatten_vertices(gen.row(k));
    const Vertices merged = merge_lower_upper(pred, gt, model);
    for (int idx : model.upper_face_indices) upper_exact = upper_exact && merged.coords.row(idx) == gt.coords.row(idx);
    for (int idx : model.lower_face_indices) lower_exact = lower_exact && merged.coords.row(idx) == pred.coords.row(idx);

    const Image& g = a.geometry[static_cast<std::size_t>(k)].image;
    const Projection posed = pose_and_project(merged, f.pose, 64, 64);
    maps_match = maps_match && g == render_pncc(posed, merged, model, 64, 64).image;
    const Rasterization raster = rasterize(posed.image_points, posed.posed.coords.col(2), model.topology, 64, 64);
    for (int y = 0; y < 64; ++y) {
      for (int x = 0; x < 64; ++x) {
        ++total;
        covered += raster.covered(y, x);
        for (int ch = 0; ch < 3; ++ch) {
          const double v = g.at(ch, y, x);
          range_ok = range_ok && v >= 0.0 && v <= 1.0;
          if (!raster.covered(y, x)) background_ok = background_ok && v == 0.0;
        }
      }
    }
  }
  out.check(a.frames == 75, std::to_string(a.frames) + " output frames for 3 s of audio over a 50-frame reference");
  out.check(upper_exact && lower_exact, "upper face passes through bitwise, lower face comes from stage 1");
  out.check(maps_match, "dub geometry maps equal a fresh render of the merged vertices");
  out.check(range_ok && background_ok, "PNCC in [0,1] with exact zero background on " + std::to_string(a.frames) +
                                           " frames (" + fmt(100.0 * covered / total) + "% covered)");
  bool files_equal = true;
  for (int k = 1; k <= a.frames; ++k) {
    std::ifstream fa(work / "c8_out_a" / "frames" / frame_name(k), std::ios::binary);
    std::ifstream fb(work / "c8_out_b" / "frames" / frame_name(k), std::ios::binary);
    std::stringstream sa, sb;
    sa << fa.rdbuf();
    sb << fb.rdbuf();
    files_equal = files_equal && sa.str() == sb.str() && !sa.str().empty();
  }
  out.check(a.output_hash == b.output_hash && files_equal, "two seeded dub runs give output hash " + a.output_hash +
                                                               " and identical frame files");
  return out;
}

struct Criterion {
  const char* name;
  double budget_s;
  Outcome (*run)(const fs::path&);
};

const Criterion kCriteria[] = {
    {"equation oracles", 60, equation_oracles},
    {"gradient suite", 300, gradient_suite},
    {"reference selection conformance", 10, algorithm1},
    {"geometry-fit recovery", 120, geometry_fit_recovery},
    {"stage-1 overfit", 600, stage1_overfit},
    {"stage-2 overfit", 1200, stage2_overfit},
    {"style separation", 300, style_separation},
    {"structural invariants", 300, structural_invariants},
};

}  // namespace
}  // namespace facedub

int main(int argc, char** argv) {
  using namespace facedub;
  CLI::App app{"Acceptance criteria"};
  int only = 0;
  std::string work = (std::filesystem::temp_directory_path() / "facedub_acceptance").string();
  app.add_option("--criterion", only, "run a single criterion (1-8); 0 runs all")->check(CLI::Range(0, 8));
  app.add_option("--work-dir", work, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  bool all_pass = true;
  for (int i = 1; i <= 8; ++i) {
    if (only != 0 && only != i) continue;
    const Criterion& c = kCriteria[i - 1];
    const fs::path dir = fs::path(work) / ("criterion_" + std::to_string(i));
    fs::create_directories(dir);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(dir);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_s) o.check(false, "runtime over the " + fmt(c.budget_s) + " s budget");
    all_pass = all_pass && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << i << " [PRIMARY] " << c.name << " (" << fmt(secs, "%.1f")
              << " s): " << o.detail << std::endl;
    fs::remove_all(dir);
  }
  return all_pass ? 0 : 1;
}
