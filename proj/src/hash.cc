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

#include "facedub/hash.h"

#include <cstdio>

namespace facedub {

Hasher& Hasher::bytes(const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    state_ ^= p[i];
    state_ *= 1099511628211ull;
  }
  return *this;
}

Hasher& Hasher::doubles(std::span<const double> values) {
  return bytes(values.data(), values.size_bytes());
}

Hasher& Hasher::matrix(const nn::Matrix& m) {
  const std::int64_t shape[2] = {m.rows(), m.cols()};
  bytes(shape, sizeof(shape));
  return bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double));
}

Hasher& Hasher::text(const std::string& s) { return bytes(s.data(), s.size()); }

std::string Hasher::hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(state_));
  return buf;
}

}  // namespace facedub
