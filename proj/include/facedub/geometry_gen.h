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

// Stage 1: audio-driven lower-face geometry.

#include "facedub/audio_style.h"
#include "facedub/geometry_fit.h"
#include "facedub/layers.h"
#include "facedub/morphable_model.h"
#include "facedub/optim.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <vector>

namespace facedub {

struct Stage1Config {
  AudioStyleConfig audio;
  int n_self = 4;
  int n_beta = 8;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static Stage1Config from_json(const nlohmann::json& j);
  bool operator==(const Stage1Config&) const = default;
};

// Cross-attention from stylised audio to the template embedding, self-attention
// blocks and the vertex decoder D_vtx predicting per-frame offsets.
class GeometryGenerator {
 public:
  GeometryGenerator() = default;
  GeometryGenerator(nn::ParameterStore& store, const Stage1Config& cfg, std::mt19937_64& rng);

  // a_styl: T x D, template_vec: 1 x D, template_flat: 1 x 3L. Returns T x 3L.
  nn::Tensor operator()(const nn::Tensor& a_styl, const nn::Tensor& template_vec,
                        const nn::Tensor& template_flat) const;
  // First block alone: a_styl + CrossAttn(LN(a_styl), template_vec).
  nn::Tensor cross_block(const nn::Tensor& a_styl, const nn::Tensor& template_vec) const;

  nn::LayerNorm cross_ln;
  nn::AttentionLayer cross;

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::AttentionLayer attn;
    nn::Mlp ffn;
  };
  std::vector<Block> blocks_;
  nn::LayerNorm final_ln_;
  nn::Mlp decoder_;
};

// Every trainable stage-1 component behind one parameter store.
class Stage1Model {
 public:
  explicit Stage1Model(const Stage1Config& cfg);
  Stage1Model(const Stage1Model&) = delete;
  Stage1Model& operator=(const Stage1Model&) = delete;

  const Stage1Config& config() const { return cfg_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }

  // Template vertices {mean alpha, 0}.
  static Vertices template_vertices(const MorphableModel& model, const Eigen::VectorXd& mean_alpha);

  // Full forward pass for precomputed audio features (T x D): style from the
  // reference beta sequence, injection, then generation. Returns T x 3L.
  nn::Tensor generate(const nn::Tensor& audio_features, const Eigen::MatrixXd& ref_beta_seq,
                      const Vertices& template_v, const MorphableModel& model) const;

  nn::Tensor style(const Eigen::MatrixXd& beta_seq, const MorphableModel& model) const;

  AudioEncoder audio;
  VertexEncoder evtx;
  StyleModule style_module;
  GeometryGenerator generator;

 private:
  Stage1Config cfg_;
  nn::ParameterStore store_;
};

// T rows of 3L into vertex sets.
std::vector<Vertices> to_vertex_sequence(const nn::Matrix& rows);

// Rows idx_low from vtx_tgt, rows idx_up from vtx_gt.
Vertices merge_lower_upper(const Vertices& vtx_tgt, const Vertices& vtx_gt,
                           const MorphableModel& model);

// render_pncc of each merged frame at its pose.
std::vector<PnccMap> build_target_geometry(const std::vector<Vertices>& merged,
                                           const std::vector<PoseParams>& poses,
                                           const MorphableModel& model, int height, int width);

// Lower-face MSE over T x 3 x |idx_low| plus 0.1 x MSE of consecutive-frame
// lower-face deltas against the ground-truth deltas. pred, gt: T x 3L.
nn::Tensor stage1_loss(const nn::Tensor& pred, const nn::Matrix& gt, const MorphableModel& model);

// Container kind "stage1", version 1; meta["config"] holds the config and
// `extra` is merged into meta.
void save_stage1(const std::filesystem::path& path, const Stage1Model& model,
                 const nn::Adam* adam = nullptr, const nlohmann::json& extra = {});
Stage1Config read_stage1_config(const std::filesystem::path& path);
// Builds a model from the stored config and loads its weights.
std::unique_ptr<Stage1Model> load_stage1(const std::filesystem::path& path);

}  // namespace facedub
