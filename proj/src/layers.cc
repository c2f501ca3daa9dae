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

#include "facedub/layers.h"

#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <tuple>

namespace facedub::nn {

Tensor ParameterStore::create(const std::string& name, Matrix init) {
  if (params_.count(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  Tensor t = Tensor::parameter(std::move(init));
  params_.emplace(name, t);
  return t;
}

const Tensor& ParameterStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::vector<Tensor> ParameterStore::list() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ParameterStore::num_values() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += static_cast<std::size_t>(t.value().size());
  return n;
}

Matrix glorot(Index rows, Index cols, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> dist(
      0.0, gain * std::sqrt(2.0 / static_cast<double>(rows + cols)));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Linear::Linear(ParameterStore& store, const std::string& name, Index in,
               Index out, std::mt19937_64& rng, bool with_bias, double gain) {
  weight = store.create(name + ".weight", glorot(in, out, rng, gain));
  if (with_bias) bias = store.create(name + ".bias", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
  Tensor y = matmul(x, weight);
  return bias.defined() ? add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, Index dim) {
  gain = store.create(name + ".gain", Matrix::Ones(1, dim));
  bias = store.create(name + ".bias", Matrix::Zero(1, dim));
}

Tensor LayerNorm::operator()(const Tensor& x) const {
  Tensor n = layer_norm_rows(x);
  Tensor ones = Tensor::constant(Matrix::Ones(x.rows(), 1));
  return add_row(mul(n, matmul(ones, gain)), bias);
}

Mlp::Mlp(ParameterStore& store, const std::string& name, Index in, Index hidden,
         Index out, std::mt19937_64& rng, double out_gain)
    : first(store, name + ".fc1", in, hidden, rng),
      second(store, name + ".fc2", hidden, out, rng, true, out_gain) {}

Tensor Mlp::operator()(const Tensor& x) const { return second(gelu(first(x))); }

AttentionLayer::AttentionLayer(ParameterStore& store, const std::string& name,
                               Index dim, std::mt19937_64& rng, double out_gain) {
  wq = store.create(name + ".wq", glorot(dim, dim, rng));
  wk = store.create(name + ".wk", glorot(dim, dim, rng));
  wv = store.create(name + ".wv", glorot(dim, dim, rng));
  wo = store.create(name + ".wo", glorot(dim, dim, rng, out_gain));
}

Tensor AttentionLayer::operator()(const Tensor& queries, const Tensor& keys,
                                  const Tensor& values) const {
  return matmul(attention(matmul(queries, wq), matmul(keys, wk),
                          matmul(values, wv)),
                wo);
}

namespace {

using MapPtr = std::shared_ptr<const std::vector<std::int64_t>>;
using MapKey = std::tuple<int, int, int, Index, int, int, int>;

MapPtr cached_map(const MapKey& key, const std::function<MapPtr()>& build) {
  static std::mutex mu;
  static std::map<MapKey, MapPtr> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  MapPtr m = build();
  cache.emplace(key, m);
  return m;
}

}  // namespace

MapPtr im2col_map(int height, int width, Index channels, int kernel, int stride,
                  int pad) {
  return cached_map({0, height, width, channels, kernel, stride, pad}, [=] {
    const int ho = (height + 2 * pad - kernel) / stride + 1;
    const int wo = (width + 2 * pad - kernel) / stride + 1;
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv: input too small");
    const Index cols = kernel * kernel * channels;
    auto map = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(ho) * wo * cols, -1);
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t row = static_cast<std::size_t>(oy * wo + ox) * cols;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= width) continue;
            for (Index c = 0; c < channels; ++c) {
              (*map)[row + (ky * kernel + kx) * channels + c] =
                  (static_cast<std::int64_t>(iy) * width + ix) * channels + c;
            }
          }
        }
      }
    }
    return MapPtr(map);
  });
}

MapPtr transposed_im2col_map(int height, int width, Index channels, int kernel,
                             int stride, int pad) {
  return cached_map({1, height, width, channels, kernel, stride, pad}, [=] {
    const int ho = (height - 1) * stride - 2 * pad + kernel;
    const int wo = (width - 1) * stride - 2 * pad + kernel;
    const Index cols = kernel * kernel * channels;
    auto map = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(ho) * wo * cols, -1);
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const std::size_t row = static_cast<std::size_t>(oy * wo + ox) * cols;
        for (int ky = 0; ky < kernel; ++ky) {
          const int ny = oy + pad - ky;
          if (ny < 0 || ny % stride != 0 || ny / stride >= height) continue;
          const int iy = ny / stride;
          for (int kx = 0; kx < kernel; ++kx) {
            const int nx = ox + pad - kx;
            if (nx < 0 || nx % stride != 0 || nx / stride >= width) continue;
            const int ix = nx / stride;
            for (Index c = 0; c < channels; ++c) {
              (*map)[row + (ky * kernel + kx) * channels + c] =
                  (static_cast<std::int64_t>(iy) * width + ix) * channels + c;
            }
          }
        }
      }
    }
    return MapPtr(map);
  });
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, Index in,
               Index out, int k, int s, int p, std::mt19937_64& rng)
    : in_channels(in), kernel(k), stride(s), pad(p) {
  weight = store.create(name + ".weight", glorot(k * k * in, out, rng));
  bias = store.create(name + ".bias", Matrix::Zero(1, out));
}

Tensor Conv2d::operator()(const Tensor& x, int height, int width) const {
  if (x.rows() != static_cast<Index>(height) * width || x.cols() != in_channels) {
    throw std::invalid_argument("Conv2d: input shape mismatch");
  }
  auto map = im2col_map(height, width, in_channels, kernel, stride, pad);
  const Index rows = static_cast<Index>(out_size(height)) * out_size(width);
  Tensor cols = gather(x, map, rows, weight.rows());
  return add_row(matmul(cols, weight), bias);
}

ConvTranspose2d::ConvTranspose2d(ParameterStore& store, const std::string& name,
                                 Index in, Index out, int k, int s, int p,
                                 std::mt19937_64& rng)
    : in_channels(in), kernel(k), stride(s), pad(p) {
  // Each output sees about (k/s)^2 taps, so scale the fan-in accordingly.
  const double taps = static_cast<double>(k * k) / static_cast<double>(s * s);
  std::normal_distribution<double> dist(
      0.0, std::sqrt(2.0 / (taps * static_cast<double>(in) + static_cast<double>(out))));
  Matrix w(k * k * in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  weight = store.create(name + ".weight", std::move(w));
  bias = store.create(name + ".bias", Matrix::Zero(1, out));
}

Tensor ConvTranspose2d::operator()(const Tensor& x, int height, int width) const {
  if (x.rows() != static_cast<Index>(height) * width || x.cols() != in_channels) {
    throw std::invalid_argument("ConvTranspose2d: input shape mismatch");
  }
  const int ho = out_size(height), wo = out_size(width);
  // Per tap, the (input row, output row) pairs it connects.
  auto taps = std::make_shared<std::vector<std::vector<std::pair<Index, Index>>>>(kernel * kernel);
  for (int ky = 0; ky < kernel; ++ky) {
    for (int kx = 0; kx < kernel; ++kx) {
      auto& pairs = (*taps)[ky * kernel + kx];
      for (int iy = 0; iy < height; ++iy) {
        const int oy = iy * stride - pad + ky;
        if (oy < 0 || oy >= ho) continue;
        for (int ix = 0; ix < width; ++ix) {
          const int ox = ix * stride - pad + kx;
          if (ox < 0 || ox >= wo) continue;
          pairs.emplace_back(static_cast<Index>(iy) * width + ix, static_cast<Index>(oy) * wo + ox);
        }
      }
    }
  }
  const Index in = in_channels;
  const Matrix& w = weight.value();
  Matrix y = Matrix::Zero(static_cast<Index>(ho) * wo, w.cols());
  for (std::size_t t = 0; t < taps->size(); ++t) {
    const Matrix p = x.value() * w.middleRows(static_cast<Index>(t) * in, in);
    for (const auto& [i, o] : (*taps)[t]) y.row(o) += p.row(i);
  }
  Tensor out = make_result(std::move(y), {x, weight}, [taps, in](Node& self) {
    Node& xn = *self.inputs[0];
    Node& wn = *self.inputs[1];
    Matrix dx = Matrix::Zero(xn.value.rows(), xn.value.cols());
    Matrix dw = Matrix::Zero(wn.value.rows(), wn.value.cols());
    Matrix g(xn.value.rows(), self.grad.cols());
    for (std::size_t t = 0; t < taps->size(); ++t) {
      g.setZero();
      for (const auto& [i, o] : (*taps)[t]) g.row(i) = self.grad.row(o);
      const Index r = static_cast<Index>(t) * in;
      if (xn.requires_grad) dx.noalias() += g * wn.value.middleRows(r, in).transpose();
      if (wn.requires_grad) dw.middleRows(r, in).noalias() += xn.value.transpose() * g;
    }
    if (xn.requires_grad) xn.accumulate(dx);
    if (wn.requires_grad) wn.accumulate(dw);
  });
  return add_row(out, bias);
}

Conv1d::Conv1d(ParameterStore& store, const std::string& name, Index in,
               Index out, int k, int s, int p, std::mt19937_64& rng)
    : in_channels(in), kernel(k), stride(s), pad(p) {
  weight = store.create(name + ".weight", glorot(k * in, out, rng));
  bias = store.create(name + ".bias", Matrix::Zero(1, out));
}

Tensor Conv1d::operator()(const Tensor& x) const {
  if (x.cols() != in_channels) throw std::invalid_argument("Conv1d: channel mismatch");
  const Index n = x.rows();
  const Index out = out_size(n);
  if (out <= 0) throw std::invalid_argument("Conv1d: input too short");
  auto map = cached_map({2, static_cast<int>(n), 1, in_channels, kernel, stride, pad}, [&] {
    const Index cols = kernel * in_channels;
    auto m = std::make_shared<std::vector<std::int64_t>>(
        static_cast<std::size_t>(out * cols), -1);
    for (Index o = 0; o < out; ++o) {
      for (int k = 0; k < kernel; ++k) {
        const Index i = o * stride - pad + k;
        if (i < 0 || i >= n) continue;
        for (Index c = 0; c < in_channels; ++c) {
          (*m)[static_cast<std::size_t>(o * cols + k * in_channels + c)] =
              i * in_channels + c;
        }
      }
    }
    return MapPtr(m);
  });
  Tensor cols = gather(x, map, out, weight.rows());
  return add_row(matmul(cols, weight), bias);
}

Matrix sinusoidal_positions(int height, int width, Index dim, double amplitude) {
  Matrix p(static_cast<Index>(height) * width, dim);
  const Index half = dim / 2;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const Index row = static_cast<Index>(y) * width + x;
      for (Index c = 0; c < dim; ++c) {
        const bool use_x = c >= half;
        const Index j = use_x ? c - half : c;
        const Index span = use_x ? dim - half : half;
        const double freq = std::numbers::pi * static_cast<double>(j / 2 + 1) /
                            static_cast<double>(std::max<Index>(span / 2, 1));
        const double pos = use_x ? static_cast<double>(x) / width
                                 : static_cast<double>(y) / height;
        p(row, c) = amplitude * ((j % 2 == 0) ? std::sin(freq * pos * 4.0)
                                              : std::cos(freq * pos * 4.0));
      }
    }
  }
  return p;
}

}  // namespace facedub::nn
