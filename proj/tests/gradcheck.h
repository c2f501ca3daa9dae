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

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

namespace facedub::testing {

// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) over
// (a random subset of at most max_coords of) the entries of `param`, using
// central differences of the scalar produced by `loss`.
inline double grad_rel_error(const std::function<nn::Tensor()>& loss,
                             nn::Tensor param, double h = 1e-5,
                             int max_coords = 64, unsigned seed = 7) {
  param.zero_grad();
  nn::Tensor l = loss();
  l.backward();
  const nn::Matrix analytic = param.grad();
  param.zero_grad();

  std::vector<nn::Index> coords(static_cast<std::size_t>(param.value().size()));
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = static_cast<nn::Index>(i);
  if (static_cast<int>(coords.size()) > max_coords) {
    std::mt19937 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(max_coords));
  }
  double diff = 0, na = 0, nn_ = 0;
  for (nn::Index c : coords) {
    double& x = param.mutable_value().data()[c];
    const double saved = x;
    x = saved + h;
    const double up = loss().item();
    x = saved - h;
    const double down = loss().item();
    x = saved;
    const double numeric = (up - down) / (2 * h);
    const double a = analytic.data()[c];
    diff += (a - numeric) * (a - numeric);
    na += a * a;
    nn_ += numeric * numeric;
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nn_), 1e-12});
  return std::sqrt(diff) / denom;
}

inline nn::Matrix random_matrix(nn::Index r, nn::Index c, std::mt19937_64& rng,
                                double sd = 1.0) {
  std::normal_distribution<double> dist(0.0, sd);
  nn::Matrix m(r, c);
  for (nn::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace facedub::testing
