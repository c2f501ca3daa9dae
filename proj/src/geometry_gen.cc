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

#include <stdexcept>

namespace facedub {

nlohmann::json Stage1Config::to_json() const {
  return {{"d", audio.d},
          {"tcn_channels", audio.tcn_channels},
          {"transformer_layers", audio.transformer_layers},
          {"num_vertices", audio.num_vertices},
          {"n_self", n_self},
          {"n_beta", n_beta},
          {"seed", seed}};
}

Stage1Config Stage1Config::from_json(const nlohmann::json& j) {
  try {
    Stage1Config c;
    c.audio.d = j.at("d").get<int>();
    c.audio.tcn_channels = j.at("tcn_channels").get<int>();
    c.audio.transformer_layers = j.at("transformer_layers").get<int>();
    c.audio.num_vertices = j.at("num_vertices").get<int>();
    c.n_self = j.at("n_self").get<int>();
    c.n_beta = j.at("n_beta").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad stage-1 config: ") + e.what());
  }
}

GeometryGenerator::GeometryGenerator(nn::ParameterStore& store, const Stage1Config& cfg,
                                     std::mt19937_64& rng)
    : cross_ln(store, "gen.cross_ln", cfg.audio.d),
      cross(store, "gen.cross", cfg.audio.d, rng, 0.5),
      final_ln_(store, "gen.final_ln", cfg.audio.d),
      decoder_(store, "gen.dvtx", cfg.audio.d, 2 * cfg.audio.d, 3 * cfg.audio.num_vertices, rng, 0.1) {
  const int d = cfg.audio.d;
  for (int i = 0; i < cfg.n_self; ++i) {
    const std::string p = "gen.self" + std::to_string(i);
    blocks_.push_back({nn::LayerNorm(store, p + ".ln1", d), nn::LayerNorm(store, p + ".ln2", d),
                       nn::AttentionLayer(store, p + ".attn", d, rng, 0.5),
                       nn::Mlp(store, p + ".ffn", d, 2 * d, d, rng, 0.5)});
  }
}

nn::Tensor GeometryGenerator::cross_block(const nn::Tensor& a_styl,
                                          const nn::Tensor& template_vec) const {
  if (template_vec.rows() != 1 || template_vec.cols() != a_styl.cols()) {
    throw std::invalid_argument("template embedding must be 1 x D");
  }
  return nn::add(a_styl, cross(cross_ln(a_styl), template_vec, template_vec));
}

nn::Tensor GeometryGenerator::operator()(const nn::Tensor& a_styl, const nn::Tensor& template_vec,
                                         const nn::Tensor& template_flat) const {
  nn::Tensor x = cross_block(a_styl, template_vec);
  for (const auto& b : blocks_) {
    const nn::Tensor h = b.ln1(x);
    x = nn::add(x, b.attn(h, h, h));
    x = nn::add(x, b.ffn(b.ln2(x)));
  }
  const nn::Tensor offsets = decoder_(final_ln_(x));
  if (template_flat.rows() != 1 || template_flat.cols() != offsets.cols()) {
    throw std::invalid_argument("template vertex row has the wrong size");
  }
  return nn::add_row(offsets, template_flat);
}

Stage1Model::Stage1Model(const Stage1Config& cfg) : cfg_(cfg) {
  std::mt19937_64 rng(cfg.seed);
  audio = AudioEncoder(store_, cfg.audio, rng);
  evtx = VertexEncoder(store_, cfg.audio, rng);
  style_module = StyleModule(store_, cfg.audio, rng);
  generator = GeometryGenerator(store_, cfg, rng);
}

Vertices Stage1Model::template_vertices(const MorphableModel& model, const Eigen::VectorXd& mean_alpha) {
  return synthesize_vertices(model, mean_alpha, Eigen::VectorXd::Zero(model.n_beta()));
}

nn::Tensor Stage1Model::style(const Eigen::MatrixXd& beta_seq, const MorphableModel& model) const {
  return style_module.extract_style(beta_seq, model, evtx);
}

nn::Tensor Stage1Model::generate(const nn::Tensor& audio_features, const Eigen::MatrixXd& ref_beta_seq,
                                 const Vertices& template_v, const MorphableModel& model) const {
  const nn::Tensor a_styl = style_module.inject_style(style(ref_beta_seq, model), audio_features);
  const nn::Tensor flat = nn::Tensor::constant(flatten_vertices(template_v));
  return generator(a_styl, evtx(flat), flat);
}

std::vector<Vertices> to_vertex_sequence(const nn::Matrix& rows) {
  std::vector<Vertices> out;
  out.reserve(static_cast<std::size_t>(rows.rows()));
  for (nn::Index t = 0; t < rows.rows(); ++t) out.push_back(unflatten_vertices(rows.row(t)));
  return out;
}

Vertices merge_lower_upper(const Vertices& vtx_tgt, const Vertices& vtx_gt, const MorphableModel& model) {
  if (vtx_tgt.size() != vtx_gt.size() || vtx_gt.size() != model.num_vertices()) {
    throw std::invalid_argument("merge: vertex counts differ");
  }
  Vertices out(nn::Matrix(vtx_gt.size(), 3));
  for (int i : model.lower_face_indices) out.coords.row(i) = vtx_tgt.coords.row(i);
  for (int i : model.upper_face_indices) out.coords.row(i) = vtx_gt.coords.row(i);
  return out;
}

std::vector<PnccMap> build_target_geometry(const std::vector<Vertices>& merged,
                                           const std::vector<PoseParams>& poses,
                                           const MorphableModel& model, int height, int width) {
  if (merged.size() != poses.size()) throw std::invalid_argument("one pose per frame required");
  std::vector<PnccMap> out;
  out.reserve(merged.size());
  for (std::size_t t = 0; t < merged.size(); ++t) {
    out.push_back(render_pncc(pose_and_project(merged[t], poses[t], height, width), merged[t], model,
                              height, width));
  }
  return out;
}

nn::Tensor stage1_loss(const nn::Tensor& pred, const nn::Matrix& gt, const MorphableModel& model) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols() || pred.cols() != 3 * model.num_vertices()) {
    throw std::invalid_argument("stage1_loss: shape mismatch");
  }
  const nn::Index t_len = pred.rows();
  const auto n_low = static_cast<nn::Index>(model.lower_face_indices.size());
  auto map = std::make_shared<std::vector<std::int64_t>>();
  map->reserve(static_cast<std::size_t>(t_len * 3 * n_low));
  for (nn::Index t = 0; t < t_len; ++t) {
    for (int i : model.lower_face_indices) {
      for (int a = 0; a < 3; ++a) map->push_back(t * pred.cols() + 3 * i + a);
    }
  }
  nn::Matrix gt_low(t_len, 3 * n_low);
  for (std::size_t k = 0; k < map->size(); ++k) gt_low.data()[k] = gt.data()[(*map)[k]];
  const nn::Tensor diff = nn::sub(nn::gather(pred, map, t_len, 3 * n_low), nn::Tensor::constant(gt_low));
  nn::Tensor loss = nn::mean(nn::square(diff));
  if (t_len >= 2) {
    const nn::Tensor d = nn::sub(nn::slice_rows(diff, 1, t_len - 1), nn::slice_rows(diff, 0, t_len - 1));
    loss = nn::add(loss, nn::scale(nn::mean(nn::square(d)), 0.1));
  }
  return loss;
}

void save_stage1(const std::filesystem::path& path, const Stage1Model& model, const nn::Adam* adam,
                 const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["config"] = model.config().to_json();
  save_checkpoint(path, "stage1", 1, meta, model.store(), adam);
}

Stage1Config read_stage1_config(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "stage1" || c.version != 1 || !c.meta.contains("config")) {
    throw DataError(path.string() + ": not a stage-1 checkpoint");
  }
  return Stage1Config::from_json(c.meta["config"]);
}

std::unique_ptr<Stage1Model> load_stage1(const std::filesystem::path& path) {
  auto model = std::make_unique<Stage1Model>(read_stage1_config(path));
  load_checkpoint(path, "stage1", 1, model->store());
  return model;
}

}  // namespace facedub
