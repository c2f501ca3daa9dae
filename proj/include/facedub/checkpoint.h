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

// Named-parameter checkpoints on top of the binary container. Optimizer
// moments are stored as "adam.m.<name>" / "adam.v.<name>" arrays with the step
// count in meta["adam_steps"].

#include "facedub/container.h"
#include "facedub/layers.h"
#include "facedub/optim.h"

#include <filesystem>
#include <string>

namespace facedub {

void save_checkpoint(const std::filesystem::path& path, const std::string& kind, int version,
                     const nlohmann::json& meta, const nn::ParameterStore& store,
                     const nn::Adam* adam = nullptr);

// Copies the stored values into `store`, whose names and shapes must match;
// restores `adam` when given and the file has optimizer state. Returns the
// meta object. Throws DataError on kind/version/shape mismatch.
nlohmann::json load_checkpoint(const std::filesystem::path& path, const std::string& kind,
                               int version, nn::ParameterStore& store, nn::Adam* adam = nullptr);

// Hash of every parameter name and value, in store order.
std::string weights_hash(const nn::ParameterStore& store);

}  // namespace facedub
