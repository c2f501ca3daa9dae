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

// Speech features, speaking-style embeddings and style injection.

#include "facedub/layers.h"
#include "facedub/morphable_model.h"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

namespace facedub {

inline constexpr int kAudioSampleRate = 16000;

struct Waveform {
  int sample_rate = kAudioSampleRate;
  std::vector<double> samples;  // mono, [-1, 1]

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Mono 16-bit PCM WAV. The reader throws DataError for any other layout.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

template <typename Scalar>
using DenseMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Row-wise softmax(q k^T / sqrt(d)).
template <typename Scalar>
DenseMatrix<Scalar> attention_weights(const DenseMatrix<Scalar>& q, const DenseMatrix<Scalar>& k) {
  if (k.rows() == 0) throw std::invalid_argument("attention over an empty key set");
  if (q.cols() != k.cols()) throw std::invalid_argument("query/key widths differ");
  DenseMatrix<Scalar> logits = (q * k.transpose()) / std::sqrt(static_cast<Scalar>(q.cols()));
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar m = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - m).exp();
    logits.row(r) /= logits.row(r).sum();
  }
  return logits;
}

// softmax(q k^T / sqrt(d)) v, rows of q attending over rows of k.
template <typename Scalar>
DenseMatrix<Scalar> attention_core(const DenseMatrix<Scalar>& q, const DenseMatrix<Scalar>& k,
                                   const DenseMatrix<Scalar>& v) {
  if (k.rows() != v.rows()) throw std::invalid_argument("key/value counts differ");
  return attention_weights(q, k) * v;
}

struct AudioStyleConfig {
  int d = 128;
  int tcn_channels = 32;
  int transformer_layers = 2;
  int num_vertices = 200;

  bool operator==(const AudioStyleConfig&) const = default;
};

// TCN (strides 5, 4, 4, 4: 50 feature rows per second), then pre-norm
// transformer layers and a final linear map, resampled to the video rate.
class AudioEncoder {
 public:
  AudioEncoder() = default;
  AudioEncoder(nn::ParameterStore& store, const AudioStyleConfig& cfg, std::mt19937_64& rng);

  // round(duration * fps) x D. Throws std::invalid_argument for a sample rate
  // other than 16 kHz or when that row count is 0.
  nn::Tensor operator()(const Waveform& w, double fps) const;
  // Same for a column of 16 kHz samples (n x 1), differentiable in the samples.
  nn::Tensor operator()(const nn::Tensor& samples, double fps) const;
  // Feature rows before temporal resampling.
  nn::Tensor native(const nn::Tensor& samples) const;

  static int output_frames(std::size_t num_samples, double fps);

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::AttentionLayer attn;
    nn::Mlp ffn;
  };
  std::vector<nn::Conv1d> tcn_;
  nn::Linear in_proj_, out_proj_;
  std::vector<Block> blocks_;
};

// Temporal linear interpolation matrix (frames x rows) from a feature track
// at `rate` rows per second to `frames` rows at `fps`, sampling frame centres.
nn::Matrix interpolation_matrix(int rows, double rate, int frames, double fps);

// E_vtx: flattened vertices (3L) -> D, two linear layers with a GELU.
class VertexEncoder {
 public:
  VertexEncoder() = default;
  VertexEncoder(nn::ParameterStore& store, const AudioStyleConfig& cfg, std::mt19937_64& rng);

  // rows x 3L -> rows x D.
  nn::Tensor operator()(const nn::Tensor& flat_vertices) const;
  Eigen::VectorXd encode(const Vertices& v) const;
  int input_size() const { return input_size_; }

  nn::Mlp mlp;

 private:
  int input_size_ = 0;
};

// Flattens (x0, y0, z0, x1, ...) into one row.
nn::Matrix flatten_vertices(const Vertices& v);
Vertices unflatten_vertices(const nn::Matrix& row);

// Style extraction and injection, sharing one vertex encoder with the
// geometry generator.
class StyleModule {
 public:
  StyleModule() = default;
  StyleModule(nn::ParameterStore& store, const AudioStyleConfig& cfg, std::mt19937_64& rng);

  // beta_seq: T x n_beta, T >= 2. Frames are encoded as {alpha = 0, beta_t}
  // vertices; the per-dimension mean and population standard deviation over
  // time go through the style layer. Invariant to row order, bit for bit.
  nn::Tensor extract_style(const Eigen::MatrixXd& beta_seq, const MorphableModel& model,
                           const VertexEncoder& evtx) const;

  // a + (attention(s Wq, a Wk, a Wv) Wo) on every row.
  nn::Tensor inject_style(const nn::Tensor& s, const nn::Tensor& a) const;

  nn::Linear style_fc;    // 2D -> D
  nn::AttentionLayer injector;
};

// Supervised contrastive loss over L2-normalised embeddings (N x D) with
// integer labels; anchors without a positive are skipped.
nn::Tensor supervised_contrastive_loss(const nn::Tensor& embeddings,
                                       const std::vector<int>& labels, double temperature);

// Feature cache keyed by (audio hash, fps, weights hash), one container per
// key under `dir`.
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {}
  static std::string key(const Waveform& w, double fps, const std::string& weights_hash);
  std::optional<nn::Matrix> load(const std::string& key) const;
  void store(const std::string& key, const nn::Matrix& features) const;

 private:
  std::filesystem::path dir_;
};

}  // namespace facedub
