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
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"

namespace h2ke::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsageError = 1;
inline constexpr int kRuntimeError = 2;

// An invalid combination of flags; exits with kUsageError.
class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

// Shared state for one invocation: the selected subcommand registers its
// body in `run`, and paths touched by the run are collected for the
// manifest.
struct Context {
  Streams io;
  std::function<void()> run;
  std::string subcommand;
  CLI::App* command = nullptr;
  std::string config_path;
  nlohmann::json config_file;  // contents of --config, if given
  std::vector<std::filesystem::path> inputs;
  std::vector<std::filesystem::path> outputs;
};

// H2KE_DATA_DIR, when set, is the root for relative paths.
std::filesystem::path data_root();
std::filesystem::path resolve(const std::filesystem::path& p);

// CLI11 helpers: an input file option (resolved, must exist) and an output
// path option (resolved).
CLI::Option* add_input(CLI::App& app, const std::string& name, std::filesystem::path& target,
                       const std::string& help, bool required = true);
CLI::Option* add_inputs(CLI::App& app, const std::string& name,
                        std::vector<std::filesystem::path>& target, const std::string& help,
                        bool required = true);
CLI::Option* add_output(CLI::App& app, const std::string& name, std::filesystem::path& target,
                        const std::string& help, bool required = true);

// Writes `path` through "path.partial" and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// Invokes `fill(partial_path)` to produce the file, then renames it.
void produce_file(const std::filesystem::path& path,
                  const std::function<void(const std::filesystem::path&)>& fill);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes "<artifact>.manifest.json": subcommand, resolved configuration,
// seed, input and output paths with SHA-256, toolkit version.
void write_manifest(const Context& ctx, const std::filesystem::path& artifact);

nlohmann::json resolved_config(const CLI::App& command);

}  // namespace h2ke::cli
