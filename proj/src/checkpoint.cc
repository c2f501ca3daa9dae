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

#include "facedub/checkpoint.h"

#include "facedub/errors.h"
#include "facedub/hash.h"

namespace facedub {

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, int version,
                     const nlohmann::json& meta, const nn::ParameterStore& store,
                     const nn::Adam* adam) {
  Container c;
  c.kind = kind;
  c.version = version;
  c.meta = meta;
  for (const auto& [name, t] : store.all()) c.arrays.push_back({name, t.value()});
  if (adam) {
    std::size_t i = 0;
    for (const auto& [name, t] : store.all()) {
      c.arrays.push_back({"adam.m." + name, adam->first_moments()[i]});
      c.arrays.push_back({"adam.v." + name, adam->second_moments()[i]});
      ++i;
    }
    c.meta["adam_steps"] = adam->steps();
  }
  write_container(path, c);
}

nlohmann::json load_checkpoint(const std::filesystem::path& path, const std::string& kind,
                               int version, nn::ParameterStore& store, nn::Adam* adam) {
  const Container c = read_container(path);
  if (c.kind != kind || c.version != version) {
    throw DataError(path.string() + ": expected " + kind + " v" + std::to_string(version) +
                    ", found " + c.kind + " v" + std::to_string(c.version));
  }
  for (const auto& [name, t] : store.all()) {
    if (!c.has_array(name)) throw DataError(path.string() + ": missing parameter " + name);
    const nn::Matrix& v = c.array(name);
    if (v.rows() != t.rows() || v.cols() != t.cols()) {
      throw DataError(path.string() + ": shape mismatch for " + name);
    }
  }
  for (auto& [name, t] : store.all()) {
    nn::Tensor copy = t;
    copy.mutable_value() = c.array(name);
  }
  if (adam && c.meta.contains("adam_steps")) {
    std::vector<nn::Matrix> m, v;
    for (const auto& [name, t] : store.all()) {
      if (!c.has_array("adam.m." + name) || !c.has_array("adam.v." + name)) {
        throw DataError(path.string() + ": incomplete optimizer state");
      }
      m.push_back(c.array("adam.m." + name));
      v.push_back(c.array("adam.v." + name));
    }
    adam->restore(std::move(m), std::move(v), c.meta["adam_steps"].get<std::int64_t>());
  }
  return c.meta;
}

std::string weights_hash(const nn::ParameterStore& store) {
  Hasher h;
  for (const auto& [name, t] : store.all()) h.text(name).matrix(t.value());
  return h.hex();
}

}  // namespace facedub
