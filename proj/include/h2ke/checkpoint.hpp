// Copyright 2026 The h2ke Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"
#include "h2ke/model.hpp"

namespace h2ke::model {

// Binary container: "H2KECKPT", u32 version, u64 header length, a JSON
// header (config, subword hash, dtype, tensor index, extra metadata), then
// row-major little-endian tensor data.
struct CheckpointInfo {
  TransformerConfig config;
  std::string subword_hash;
  std::string dtype;  // "f32" or "f64"
  nlohmann::json extra;
};

class SubwordHashMismatch : public Error {
 public:
  using Error::Error;
};

// Writes through a ".partial" file and renames on success.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params,
                     const std::string& subword_hash, const nlohmann::json& extra = {});

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Refuses to load when `expected_hash` is set and differs, unless `force`.
template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path,
                               const std::optional<std::string>& expected_hash = std::nullopt,
                               bool force = false, CheckpointInfo* info = nullptr);

}  // namespace h2ke::model
