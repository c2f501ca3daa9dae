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

#include "facedub/renderer.h"

#include "facedub/checkpoint.h"
#include "facedub/errors.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace facedub {

void RendererConfig::validate() const {
  if (channels <= 0) throw std::invalid_argument("renderer channels must be positive");
  if (height <= 0 || width <= 0 || height % 4 != 0 || width % 4 != 0) {
    throw std::invalid_argument("renderer size must be a positive multiple of 4");
  }
  if (n_f < 1 || n_l < 1) throw std::invalid_argument("reference counts must be >= 1");
}

nlohmann::json RendererConfig::to_json() const {
  return {{"channels", channels}, {"height", height}, {"width", width},
          {"n_f", n_f},           {"n_l", n_l},       {"seed", seed}};
}

RendererConfig RendererConfig::from_json(const nlohmann::json& j) {
  try {
    RendererConfig c;
    c.channels = j.at("channels").get<int>();
    c.height = j.at("height").get<int>();
    c.width = j.at("width").get<int>();
    c.n_f = j.at("n_f").get<int>();
    c.n_l = j.at("n_l").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad stage-2 config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("bad stage-2 config: ") + e.what());
  }
}

FlatQKV flatten_qkv(const nn::Tensor& g_tgt, std::span<const nn::Tensor> g_refs,
                    std::span<const nn::Tensor> f_refs, const nn::Tensor& positions) {
  if (g_refs.empty() || g_refs.size() != f_refs.size()) {
    throw std::invalid_argument("flatten_qkv: need matching non-empty reference lists");
  }
  auto same = [&](const nn::Tensor& t) { return t.rows() == g_tgt.rows() && t.cols() == g_tgt.cols(); };
  if (!same(positions)) throw std::invalid_argument("flatten_qkv: positional table shape");
  std::vector<nn::Tensor> ks, vs;
  for (std::size_t n = 0; n < g_refs.size(); ++n) {
    if (!same(g_refs[n]) || !same(f_refs[n])) throw std::invalid_argument("flatten_qkv: latent shape mismatch");
    ks.push_back(nn::add(g_refs[n], positions));
    vs.push_back(f_refs[n]);
  }
  return {nn::add(g_tgt, positions), nn::concat_rows(ks), nn::concat_rows(vs)};
}

nn::Matrix flatten_latent(const Image& latent) { return to_rows(latent); }

Image unflatten_latent(const nn::Matrix& rows, int height, int width) {
  return from_rows(rows, height, width);
}

Image lip_mask(const PnccMap& g, const MorphableModel& model) {
  const Image& img = g.image;
  if (img.channels != 3 || img.height % 4 != 0 || img.width % 4 != 0) {
    throw std::invalid_argument("lip_mask: expected a 3-channel map with sides divisible by 4");
  }
  const Vertices mean = synthesize_vertices(model, Eigen::VectorXd::Zero(model.n_alpha()), Eigen::VectorXd::Zero(model.n_beta()));
  const nn::Matrix colours = model.normalized_coords(mean);
  std::vector<char> is_lip(static_cast<std::size_t>(model.num_vertices()), 0);
  for (int i : model.lip_region_indices) is_lip[static_cast<std::size_t>(i)] = 1;

  Image full(1, img.height, img.width);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Eigen::RowVector3d c(img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
      if (c.isZero(0.0)) continue;
      Eigen::Index nearest = 0;
      (colours.rowwise() - c).rowwise().squaredNorm().minCoeff(&nearest);
      full.at(0, y, x) = is_lip[static_cast<std::size_t>(nearest)] ? 1.0 : 0.0;
    }
  }
  Image out = downsample_area(full, 4);
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

namespace {

nn::Matrix sinusoid_table(int h, int w, int c) {
  nn::Matrix p(static_cast<nn::Index>(h) * w, c);
  const int half = c / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int k = 0; k < c; ++k) {
        const bool along_x = k >= half;
        const int j = along_x ? k - half : k;
        const int span = along_x ? c - half : half;
        const double freq = std::pow(100.0, -2.0 * (j / 2) / std::max(span, 1));
        const double arg = (along_x ? x : y) * freq;
        p(y * w + x, k) = 0.1 * (j % 2 == 0 ? std::sin(arg) : std::cos(arg));
      }
    }
  }
  return p;
}

}  // namespace

Renderer::Renderer(const RendererConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg.seed);
  const int c = cfg.channels;
  geometry_enc_ = {nn::Conv2d(store_, "eref.conv1", 3, c, 4, 2, 1, rng),
                   nn::Conv2d(store_, "eref.conv2", c, c, 4, 2, 1, rng)};
  texture_enc_ = {nn::Conv2d(store_, "etex.conv1", 3, c, 4, 2, 1, rng),
                  nn::Conv2d(store_, "etex.conv2", c, c, 4, 2, 1, rng)};
  const nn::Matrix table = sinusoid_table(cfg.latent_height(), cfg.latent_width(), c);
  for (auto [b, name] : {std::pair{&lip_branch, "lip"}, std::pair{&face_branch, "face"}}) {
    const std::string p = std::string("attn.") + name;
    b->positions = store_.create(p + ".pos", table);
    b->wq = store_.create(p + ".wq", nn::Matrix::Identity(c, c));
    b->wk = store_.create(p + ".wk", nn::Matrix::Identity(c, c));
  }
  up1_ = nn::ConvTranspose2d(store_, "dtex.up1", c + 3, c, 4, 2, 1, rng);
  up2_ = nn::ConvTranspose2d(store_, "dtex.up2", c, 3, 4, 2, 1, rng);
}

nn::Tensor Renderer::encode(const Encoder& e, const nn::Tensor& rows) const {
  if (rows.rows() != static_cast<nn::Index>(cfg_.height) * cfg_.width || rows.cols() != 3) {
    throw std::invalid_argument("renderer: expected a 3 x H x W input");
  }
  const nn::Tensor h = nn::gelu(e.first(rows, cfg_.height, cfg_.width));
  return e.second(h, cfg_.height / 2, cfg_.width / 2);
}

nn::Tensor Renderer::encode_geometry(const nn::Tensor& rows) const { return encode(geometry_enc_, rows); }
nn::Tensor Renderer::encode_texture(const nn::Tensor& rows) const { return encode(texture_enc_, rows); }
nn::Tensor Renderer::encode_geometry(const Image& pncc) const {
  return encode_geometry(nn::Tensor::constant(to_rows(pncc)));
}
nn::Tensor Renderer::encode_texture(const Image& frame) const {
  return encode_texture(nn::Tensor::constant(to_rows(frame)));
}

EncodedReference Renderer::encode_reference(const PnccMap& g, const Image& frame,
                                            const MorphableModel& model) const {
  return {encode_geometry(g.image), encode_texture(frame), to_rows(lip_mask(g, model))};
}

nn::Tensor Renderer::branch(bool lip, const nn::Tensor& g_tgt, std::span<const EncodedReference> refs) const {
  if (refs.empty()) throw std::invalid_argument("attention over an empty reference set");
  const Branch& b = lip ? lip_branch : face_branch;
  std::vector<nn::Tensor> gs, fs;
  for (const auto& r : refs) {
    gs.push_back(r.geometry);
    fs.push_back(r.texture);
  }
  FlatQKV qkv = flatten_qkv(g_tgt, gs, fs, b.positions);
  if (lip) {
    std::vector<nn::Index> keep;
    const nn::Index hw = g_tgt.rows();
    for (std::size_t n = 0; n < refs.size(); ++n) {
      for (nn::Index p = 0; p < hw; ++p) {
        if (refs[n].lip(p, 0) > 0.05) keep.push_back(static_cast<nn::Index>(n) * hw + p);
      }
    }
    if (!keep.empty()) {
      qkv.k = nn::gather_rows(qkv.k, keep);
      qkv.v = nn::gather_rows(qkv.v, keep);
    }
  }
  return nn::attention(nn::matmul(qkv.q, b.wq), nn::matmul(qkv.k, b.wk), qkv.v);
}

nn::Tensor Renderer::dual_attention(const nn::Tensor& g_tgt, std::span<const EncodedReference> face_refs,
                                    std::span<const EncodedReference> lip_refs,
                                    const nn::Matrix& mask) const {
  if (mask.rows() != g_tgt.rows() || mask.cols() != 1) throw std::invalid_argument("lip mask shape");
  const nn::Tensor lip = branch(true, g_tgt, lip_refs);
  const nn::Tensor face = branch(false, g_tgt, face_refs);
  const nn::Matrix rest = (1.0 - mask.array()).matrix();
  return nn::add(nn::mul_col(lip, nn::Tensor::constant(mask)), nn::mul_col(face, nn::Tensor::constant(rest)));
}

nn::Tensor Renderer::decode_texture(const nn::Tensor& latent, const Image& g_tgt) const {
  const int h = cfg_.latent_height(), w = cfg_.latent_width();
  if (latent.rows() != static_cast<nn::Index>(h) * w || latent.cols() != cfg_.channels) {
    throw std::invalid_argument("decode_texture: latent shape mismatch");
  }
  if (g_tgt.channels != 3 || g_tgt.height != cfg_.height || g_tgt.width != cfg_.width) {
    throw std::invalid_argument("decode_texture: geometry map shape mismatch");
  }
  const nn::Tensor g = nn::Tensor::constant(to_rows(resize_bilinear(g_tgt, h, w)));
  const nn::Tensor x = nn::concat_cols(std::vector<nn::Tensor>{latent, g});
  const nn::Tensor up = nn::gelu(up1_(x, h, w));
  return nn::sigmoid(up2_(up, 2 * h, 2 * w));
}

nn::Tensor Renderer::render(const PnccMap& g_tgt, std::span<const EncodedReference> face_refs,
                            std::span<const EncodedReference> lip_refs, const MorphableModel& model) const {
  const nn::Tensor g = encode_geometry(g_tgt.image);
  return decode_texture(dual_attention(g, face_refs, lip_refs, to_rows(lip_mask(g_tgt, model))), g_tgt.image);
}

nn::Tensor stage2_loss(const nn::Tensor& pred, const nn::Matrix& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw std::invalid_argument("stage2_loss: shape mismatch");
  }
  return nn::mean(nn::abs(nn::sub(pred, nn::Tensor::constant(gt))));
}

void save_stage2(const std::filesystem::path& path, const Renderer& r, const nn::Adam* adam,
                 const nlohmann::json& extra) {
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["config"] = r.config().to_json();
  save_checkpoint(path, "stage2", 1, meta, r.store(), adam);
}

RendererConfig read_stage2_config(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "stage2" || c.version != 1 || !c.meta.contains("config")) {
    throw DataError(path.string() + ": not a stage-2 checkpoint");
  }
  return RendererConfig::from_json(c.meta["config"]);
}

std::unique_ptr<Renderer> load_stage2(const std::filesystem::path& path) {
  auto r = std::make_unique<Renderer>(read_stage2_config(path));
  load_checkpoint(path, "stage2", 1, r->store());
  return r;
}

}  // namespace facedub
