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
#include <span>
#include <string>

namespace facedub {

// FNV-1a, 64 bit. Used for provenance and cache keys, not security.
class Hasher {
 public:
  Hasher& bytes(const void* data, std::size_t n);
  Hasher& doubles(std::span<const double> values);
  Hasher& matrix(const nn::Matrix& m);
  Hasher& text(const std::string& s);
  std::uint64_t value() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 1469598103934665603ull;
};

}  // namespace facedub
