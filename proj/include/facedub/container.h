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

// Binary container shared by the morphable-model file and the checkpoints.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "FDUBCNT1"
//   bytes 8..15  uint64 header length N
//   next N bytes UTF-8 JSON header:
//                  {"kind": str, "version": int, "meta": {...},
//                   "arrays": [{"name": str, "rows": int, "cols": int}, ...]}
//   remainder    float64 payloads of the arrays, in header order, row-major

#include "facedub/tensor.h"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace facedub {

struct NamedArray {
  std::string name;
  nn::Matrix data;
};

struct Container {
  std::string kind;
  int version = 1;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const nn::Matrix& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& c);
// Throws DataError on malformed input.
Container read_container(const std::filesystem::path& path);

}  // namespace facedub
