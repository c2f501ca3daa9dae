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

#include "facedub/refselect.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace facedub {

namespace {

void check_frame(int i, int t) {
  if (t < 1) throw std::invalid_argument("sequence is empty");
  if (i < 1 || i > t) throw std::invalid_argument("frame index out of range");
}

void check_counts(int n_f, int n_l) {
  if (n_f < 1 || n_l < 1) throw std::invalid_argument("reference counts must be positive");
}

}  // namespace

std::vector<int> rounded_linspace(double low, double high, int n) {
  std::vector<int> out;
  for (int k = 0; k < n; ++k) {
    const double x = n == 1 ? low : low + (high - low) * k / (n - 1);
    out.push_back(static_cast<int>(std::floor(x + 0.5)));
  }
  return out;
}

ReferenceSet training_strategy(int i, int t, int n_f, int n_l, std::uint64_t seed) {
  check_frame(i, t);
  check_counts(n_f, n_l);
  ReferenceSet refs;
  const int low = std::max(1, i - 2 * n_f);
  const int high = std::min(t, i + 2 * n_f);
  std::vector<char> used(static_cast<std::size_t>(t) + 1, 0);
  for (int x : rounded_linspace(low, high, n_f)) {
    int pick = x;
    if (used[static_cast<std::size_t>(x)]) {
      for (int d = 1; d < t; ++d) {
        if (x + d <= t && !used[static_cast<std::size_t>(x + d)]) {
          pick = x + d;
          break;
        }
        if (x - d >= 1 && !used[static_cast<std::size_t>(x - d)]) {
          pick = x - d;
          break;
        }
      }
    }
    used[static_cast<std::size_t>(pick)] = 1;
    refs.face_indices.push_back(pick);
  }
  std::sort(refs.face_indices.begin(), refs.face_indices.end());

  std::mt19937_64 rng(seed);
  if (t >= n_l) {
    std::vector<int> pool(static_cast<std::size_t>(t));
    std::iota(pool.begin(), pool.end(), 1);
    for (int k = 0; k < n_l; ++k) {
      std::uniform_int_distribution<int> pick(k, t - 1);
      std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick(rng))]);
      refs.lip_indices.push_back(pool[static_cast<std::size_t>(k)]);
    }
  } else {
    std::uniform_int_distribution<int> pick(1, t);
    for (int k = 0; k < n_l; ++k) refs.lip_indices.push_back(pick(rng));
  }
  return refs;
}

std::vector<int> lip_argsort(std::span<const double> openings) {
  std::vector<int> order(openings.size());
  std::iota(order.begin(), order.end(), 1);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return openings[static_cast<std::size_t>(a - 1)] < openings[static_cast<std::size_t>(b - 1)];
  });
  return order;
}

std::vector<int> lip_argsort(std::span<const Vertices> canonical, const MorphableModel& model) {
  std::vector<double> openings;
  openings.reserve(canonical.size());
  for (const auto& v : canonical) openings.push_back(mouth_opening_size(v, model));
  return lip_argsort(openings);
}

ReferenceSet inference_strategy(int i, std::span<const double> openings, int n_f, int n_l) {
  const int t = static_cast<int>(openings.size());
  check_frame(i, t);
  check_counts(n_f, n_l);
  ReferenceSet refs;
  if (t <= n_f) {
    for (int k = 1; k <= t; ++k) refs.face_indices.push_back(k);
  } else {
    const int start = std::clamp(i - n_f / 2, 1, t - n_f + 1);
    for (int k = 0; k < n_f; ++k) refs.face_indices.push_back(start + k);
  }
  const std::vector<int> sorted = lip_argsort(openings);
  for (int pos : rounded_linspace(1, t, n_l)) {
    const int frame = sorted[static_cast<std::size_t>(pos - 1)];
    if (std::find(refs.lip_indices.begin(), refs.lip_indices.end(), frame) == refs.lip_indices.end()) {
      refs.lip_indices.push_back(frame);
    }
  }
  return refs;
}

ReferenceSet inference_strategy(int i, std::span<const Vertices> canonical,
                                const MorphableModel& model, int n_f, int n_l) {
  std::vector<double> openings;
  openings.reserve(canonical.size());
  for (const auto& v : canonical) openings.push_back(mouth_opening_size(v, model));
  return inference_strategy(i, openings, n_f, n_l);
}

}  // namespace facedub
