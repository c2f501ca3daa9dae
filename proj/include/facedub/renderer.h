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

// Stage 2: reference-based face rendering with parallel lip and face
// attention over encoded reference frames.

#include "facedub/image.h"
#include "facedub/layers.h"
#include "facedub/morphable_model.h"
#include "facedub/optim.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace facedub {

struct RendererConfig {
  int channels = 32;
  int height = 64;
  int width = 64;
  int n_f = 5;
  int n_l = 5;
  std::uint64_t seed = 1;

  int latent_height() const { return height / 4; }
  int latent_width() const { return width / 4; }
  // Throws std::invalid_argument unless H and W are positive multiples of 4.
  void validate() const;
  nlohmann::json to_json() const;
  static RendererConfig from_json(const nlohmann::json& j);
  bool operator==(const RendererConfig&) const = default;
};

// Flattened attention inputs. Q = g + P; K stacks (G_n + P) reference by
// reference; V stacks F_n. Latents are (h*w) x C.
struct FlatQKV {
  nn::Tensor q, k, v;
};
FlatQKV flatten_qkv(const nn::Tensor& g_tgt, std::span<const nn::Tensor> g_refs,
                    std::span<const nn::Tensor> f_refs, const nn::Tensor& positions);

// C x h x w grid <-> (h*w) x C rows.
nn::Matrix flatten_latent(const Image& latent);
Image unflatten_latent(const nn::Matrix& rows, int height, int width);

// Soft lip coverage on the latent grid (1 x H/4 x W/4). A covered pixel is
// lip when its PNCC colour is nearest to the normalised mean-shape colour of a
// lip-region vertex.
Image lip_mask(const PnccMap& g, const MorphableModel& model);

// One encoded reference frame.
struct EncodedReference {
  nn::Tensor geometry;  // (h*w) x C
  nn::Tensor texture;   // (h*w) x C
  nn::Matrix lip;       // (h*w) x 1 lip mask
};

class Renderer {
 public:
  explicit Renderer(const RendererConfig& cfg);
  Renderer(const Renderer&) = delete;
  Renderer& operator=(const Renderer&) = delete;

  const RendererConfig& config() const { return cfg_; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }

  // 3 x H x W image (or (H*W) x 3 rows) -> (H/4*W/4) x C.
  nn::Tensor encode_geometry(const Image& pncc) const;
  nn::Tensor encode_texture(const Image& frame) const;
  nn::Tensor encode_geometry(const nn::Tensor& rows) const;
  nn::Tensor encode_texture(const nn::Tensor& rows) const;
  EncodedReference encode_reference(const PnccMap& g, const Image& frame,
                                    const MorphableModel& model) const;

  // Lip-Attention x M + Face-Attention x (1 - M); mask is (h*w) x 1.
  // Throws std::invalid_argument for an empty reference set.
  nn::Tensor dual_attention(const nn::Tensor& g_tgt, std::span<const EncodedReference> face_refs,
                            std::span<const EncodedReference> lip_refs,
                            const nn::Matrix& mask) const;
  // One branch on its own; lip = true restricts K/V to lip positions of the
  // references (all positions when none qualify).
  nn::Tensor branch(bool lip, const nn::Tensor& g_tgt, std::span<const EncodedReference> refs) const;

  // latent (h*w) x C and the target PNCC -> (H*W) x 3 in (0, 1).
  nn::Tensor decode_texture(const nn::Tensor& latent, const Image& g_tgt) const;

  // Full path for one target frame.
  nn::Tensor render(const PnccMap& g_tgt, std::span<const EncodedReference> face_refs,
                    std::span<const EncodedReference> lip_refs, const MorphableModel& model) const;

  struct Branch {
    nn::Tensor positions;  // (h*w) x C
    nn::Tensor wq, wk;     // C x C
  };
  Branch lip_branch, face_branch;

 private:
  struct Encoder {
    nn::Conv2d first, second;
  };
  nn::Tensor encode(const Encoder& e, const nn::Tensor& rows) const;

  RendererConfig cfg_;
  nn::ParameterStore store_;
  Encoder geometry_enc_, texture_enc_;
  nn::ConvTranspose2d up1_, up2_;
};

// Mean absolute error.
nn::Tensor stage2_loss(const nn::Tensor& pred, const nn::Matrix& gt);

// Container kind "stage2", version 1, meta["config"] = RendererConfig.
void save_stage2(const std::filesystem::path& path, const Renderer& r, const nn::Adam* adam = nullptr,
                 const nlohmann::json& extra = {});
RendererConfig read_stage2_config(const std::filesystem::path& path);
std::unique_ptr<Renderer> load_stage2(const std::filesystem::path& path);

}  // namespace facedub
