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

#include "facedub/tensor.h"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace facedub::nn {

// Named parameters of a network, in deterministic (lexicographic) order.
class ParameterStore {
 public:
  Tensor create(const std::string& name, Matrix init);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Tensor>& all() const { return params_; }
  std::vector<Tensor> list() const;
  void zero_grad();
  std::size_t num_values() const;

 private:
  std::map<std::string, Tensor> params_;
};

// Glorot-normal initialised matrix.
Matrix glorot(Index rows, Index cols, std::mt19937_64& rng, double gain = 1.0);

struct Linear {
  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, Index in, Index out,
         std::mt19937_64& rng, bool bias = true, double gain = 1.0);
  Tensor operator()(const Tensor& x) const;

  Tensor weight;  // in x out
  Tensor bias;    // 1 x out, undefined when disabled
};

// Layer normalisation over the last dimension with learned gain and bias.
struct LayerNorm {
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, Index dim);
  Tensor operator()(const Tensor& x) const;

  Tensor gain;
  Tensor bias;
};

// Two-layer perceptron with a GELU between the layers.
struct Mlp {
  Mlp() = default;
  Mlp(ParameterStore& store, const std::string& name, Index in, Index hidden,
      Index out, std::mt19937_64& rng, double out_gain = 1.0);
  Tensor operator()(const Tensor& x) const;

  Linear first;
  Linear second;
};

// Single-head attention with learned query/key/value/output projections.
struct AttentionLayer {
  AttentionLayer() = default;
  AttentionLayer(ParameterStore& store, const std::string& name, Index dim,
                 std::mt19937_64& rng, double out_gain = 1.0);
  Tensor operator()(const Tensor& queries, const Tensor& keys,
                    const Tensor& values) const;

  Tensor wq, wk, wv, wo;
};

// Feature maps are (height*width) x channels, positions in row-major order.
struct Conv2d {
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, Index in_channels,
         Index out_channels, int kernel, int stride, int pad, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, int height, int width) const;
  int out_size(int n) const { return (n + 2 * pad - kernel) / stride + 1; }

  Index in_channels = 0;
  int kernel = 0, stride = 1, pad = 0;
  Tensor weight;  // (kernel*kernel*in) x out
  Tensor bias;
};

struct ConvTranspose2d {
  ConvTranspose2d() = default;
  ConvTranspose2d(ParameterStore& store, const std::string& name,
                  Index in_channels, Index out_channels, int kernel, int stride,
                  int pad, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x, int height, int width) const;
  int out_size(int n) const { return (n - 1) * stride - 2 * pad + kernel; }

  Index in_channels = 0;
  int kernel = 0, stride = 1, pad = 0;
  Tensor weight;
  Tensor bias;
};

// Sequences are length x channels.
struct Conv1d {
  Conv1d() = default;
  Conv1d(ParameterStore& store, const std::string& name, Index in_channels,
         Index out_channels, int kernel, int stride, int pad, std::mt19937_64& rng);
  Tensor operator()(const Tensor& x) const;
  Index out_size(Index n) const { return (n + 2 * pad - kernel) / stride + 1; }

  Index in_channels = 0;
  int kernel = 0, stride = 1, pad = 0;
  Tensor weight;
  Tensor bias;
};

// Index maps used by the convolution layers; exposed for tests.
std::shared_ptr<const std::vector<std::int64_t>> im2col_map(
    int height, int width, Index channels, int kernel, int stride, int pad);
std::shared_ptr<const std::vector<std::int64_t>> transposed_im2col_map(
    int height, int width, Index channels, int kernel, int stride, int pad);

// 2-D sinusoidal position table, (height*width) x dim.
Matrix sinusoidal_positions(int height, int width, Index dim, double amplitude);

}  // namespace facedub::nn
