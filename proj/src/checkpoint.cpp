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

#include "h2ke/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

namespace h2ke::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'H', '2', 'K', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

struct RawCheckpoint {
  CheckpointInfo info;
  nlohmann::json tensors;
  std::vector<char> data;
};

RawCheckpoint read_raw(const std::filesystem::path& path, bool with_data) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError(path.string() + " is not an h2ke checkpoint");
  }
  if (version != kVersion) {
    throw ParseError(path.string() + ": unsupported checkpoint version " +
                     std::to_string(version));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ParseError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    const auto h = nlohmann::json::parse(header);
    raw.info.config = TransformerConfig::from_json(h.at("config"));
    raw.info.subword_hash = h.at("subword_hash").get<std::string>();
    raw.info.dtype = h.at("dtype").get<std::string>();
    raw.info.extra = h.value("extra", nlohmann::json::object());
    raw.tensors = h.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad header (" + e.what() + ")");
  }
  if (with_data) {
    raw.data.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  return raw;
}

template <typename Dst, typename Src>
void copy_converted(const char* bytes, std::size_t count, Dst* dst) {
  for (std::size_t i = 0; i < count; ++i) {
    Src v;
    std::memcpy(&v, bytes + i * sizeof(Src), sizeof(Src));
    dst[i] = static_cast<Dst>(v);
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ModelParams<T>& params,
                     const std::string& subword_hash, const nlohmann::json& extra) {
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& t = params.tensors[i];
    const std::uint64_t nbytes = t.size() * sizeof(T);
    index.push_back({{"name", params.tensors.name(i)},
                     {"shape", {t.rows, t.cols}},
                     {"offset", offset},
                     {"nbytes", nbytes}});
    offset += nbytes;
  }
  nlohmann::json header{{"config", params.config.to_json()},
                        {"subword_hash", subword_hash},
                        {"dtype", dtype_name<T>()},
                        {"tensors", index},
                        {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string h = header.dump();
  const std::uint64_t header_len = h.size();

  auto partial = path;
  partial += ".partial";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + partial.string());
    out.write(kMagic, 8);
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& t : params.tensors) {
      out.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.size() * sizeof(T)));
    }
    if (!out) throw Error("short write to " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return read_raw(path, false).info;
}

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path,
                               const std::optional<std::string>& expected_hash, bool force,
                               CheckpointInfo* info) {
  auto raw = read_raw(path, true);
  if (expected_hash && *expected_hash != raw.info.subword_hash && !force) {
    throw SubwordHashMismatch(path.string() + " was trained with subword model " +
                              raw.info.subword_hash + " but " + *expected_hash +
                              " was supplied (use --force to override)");
  }
  const std::size_t width = raw.info.dtype == "f32" ? 4 : raw.info.dtype == "f64" ? 8 : 0;
  if (width == 0) throw ParseError(path.string() + ": unknown dtype " + raw.info.dtype);

  ModelParams<T> params = allocate_params<T>(raw.info.config);
  if (raw.tensors.size() != params.tensors.size()) {
    throw ParseError(path.string() + ": tensor count does not match its config");
  }
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& entry = raw.tensors[i];
    auto& t = params.tensors[i];
    const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
    if (entry.at("name").get<std::string>() != params.tensors.name(i) || shape.size() != 2 ||
        shape[0] != t.rows || shape[1] != t.cols) {
      throw ParseError(path.string() + ": tensor '" + entry.at("name").get<std::string>() +
                       "' does not match its config");
    }
    const auto offset = entry.at("offset").get<std::uint64_t>();
    if (offset + t.size() * width > raw.data.size()) {
      throw ParseError(path.string() + ": truncated tensor data");
    }
    const char* bytes = raw.data.data() + offset;
    if (width == 4) {
      copy_converted<T, float>(bytes, t.size(), t.data.data());
    } else {
      copy_converted<T, double>(bytes, t.size(), t.data.data());
    }
  }
  if (info) *info = std::move(raw.info);
  return params;
}

template void save_checkpoint<float>(const std::filesystem::path&, const ModelParams<float>&,
                                     const std::string&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const ModelParams<double>&,
                                      const std::string&, const nlohmann::json&);
template ModelParams<float> load_checkpoint<float>(const std::filesystem::path&,
                                                   const std::optional<std::string>&, bool,
                                                   CheckpointInfo*);
template ModelParams<double> load_checkpoint<double>(const std::filesystem::path&,
                                                     const std::optional<std::string>&, bool,
                                                     CheckpointInfo*);

}  // namespace h2ke::model
