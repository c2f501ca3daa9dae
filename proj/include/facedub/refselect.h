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

// Reference-frame selection for the renderer. Frame indices are 1-based.

#include "facedub/morphable_model.h"

#include <cstdint>
#include <span>
#include <vector>

namespace facedub {

struct ReferenceSet {
  std::vector<int> face_indices;  // ascending
  std::vector<int> lip_indices;

  bool operator==(const ReferenceSet&) const = default;
};

// round(linspace(low, high, n)) with halves rounded up.
std::vector<int> rounded_linspace(double low, double high, int n);

// Face references spread over [i - 2 n_f, i + 2 n_f] clipped to [1, T] with
// duplicates nudged to the nearest unused frame; lip references drawn
// uniformly from [1, T] (without replacement when T >= n_l).
// Throws std::invalid_argument when i is outside [1, T].
ReferenceSet training_strategy(int i, int t, int n_f = 5, int n_l = 5, std::uint64_t seed = 0);

// Frame indices ordered by ascending mouth opening; ties keep frame order.
std::vector<int> lip_argsort(std::span<const double> openings);
std::vector<int> lip_argsort(std::span<const Vertices> canonical, const MorphableModel& model);

// n_f consecutive frames around i (shifted to stay inside [1, T]); lip
// references at evenly spaced ranks of the mouth-opening order, duplicates
// dropped.
ReferenceSet inference_strategy(int i, std::span<const double> openings, int n_f = 5,
                                int n_l = 25);
ReferenceSet inference_strategy(int i, std::span<const Vertices> canonical,
                                const MorphableModel& model, int n_f = 5, int n_l = 25);

}  // namespace facedub
