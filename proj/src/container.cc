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

#include "facedub/container.h"

#include "facedub/errors.h"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace facedub {

namespace {
constexpr char kMagic[8] = {'F', 'D', 'U', 'B', 'C', 'N', 'T', '1'};
}

const nn::Matrix& Container::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a.data;
  }
  throw DataError(kind + ": missing array '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  nlohmann::json header;
  header["kind"] = c.kind;
  header["version"] = c.version;
  header["meta"] = c.meta;
  header["arrays"] = nlohmann::json::array();
  for (const auto& a : c.arrays) {
    header["arrays"].push_back(
        {{"name", a.name}, {"rows", a.data.rows()}, {"cols", a.data.cols()}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic, sizeof(kMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : c.arrays) {
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a facedub container: " + path.string());
  }
  if (len > (1ull << 30)) throw DataError("container header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated container header: " + path.string());

  Container c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.kind = header.at("kind").get<std::string>();
    c.version = header.at("version").get<int>();
    c.meta = header.value("meta", nlohmann::json::object());
    for (const auto& a : header.at("arrays")) {
      const auto rows = a.at("rows").get<nn::Index>();
      const auto cols = a.at("cols").get<nn::Index>();
      if (rows < 0 || cols < 0) throw DataError("negative array shape");
      NamedArray arr{a.at("name").get<std::string>(), nn::Matrix(rows, cols)};
      in.read(reinterpret_cast<char*>(arr.data.data()),
              static_cast<std::streamsize>(arr.data.size() * sizeof(double)));
      if (!in) throw DataError("truncated array payload: " + arr.name);
      c.arrays.push_back(std::move(arr));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed container header: ") + e.what());
  }
  return c;
}

}  // namespace facedub
