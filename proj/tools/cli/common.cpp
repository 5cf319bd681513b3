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

#include "common.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "h2ke/error.hpp"
#include "h2ke/hash.hpp"

namespace h2ke::cli {

std::filesystem::path data_root() {
  const char* env = std::getenv("H2KE_DATA_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path();
}

std::filesystem::path resolve(const std::filesystem::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  const auto root = data_root();
  return root.empty() ? p : root / p;
}

namespace {

std::string resolve_str(const std::string& s) { return resolve(s).string(); }

}  // namespace

CLI::Option* add_input(CLI::App& app, const std::string& name, std::filesystem::path& target,
                       const std::string& help, bool required) {
  auto* o = app.add_option(name, target, help)->transform(resolve_str)->check(CLI::ExistingFile);
  o->required(required);
  return o;
}

CLI::Option* add_inputs(CLI::App& app, const std::string& name,
                        std::vector<std::filesystem::path>& target, const std::string& help,
                        bool required) {
  auto* o = app.add_option(name, target, help)->transform(resolve_str)->check(CLI::ExistingFile);
  o->required(required)->default_str("");
  return o;
}

CLI::Option* add_output(CLI::App& app, const std::string& name, std::filesystem::path& target,
                        const std::string& help, bool required) {
  auto* o = app.add_option(name, target, help)->transform(resolve_str);
  o->required(required);
  return o;
}

void produce_file(const std::filesystem::path& path,
                  const std::function<void(const std::filesystem::path&)>& fill) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path partial = path.string() + ".partial";
  fill(partial);
  std::filesystem::rename(partial, path);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  produce_file(path, [&](const std::filesystem::path& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    out << content;
    out.close();
    if (!out) throw Error("cannot write " + tmp.string());
  });
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(line);
  }
  return out;
}

nlohmann::json resolved_config(const CLI::App& command) {
  nlohmann::json cfg = nlohmann::json::object();
  for (const CLI::Option* o : command.get_options()) {
    const auto name = o->get_single_name();
    if (name.empty() || name == "help" || name == "config") continue;
    if (o->count() > 0) {
      const auto& r = o->results();
      cfg[name] = r.size() == 1 ? nlohmann::json(r.front()) : nlohmann::json(r);
    } else {
      cfg[name] = o->get_default_str();
    }
  }
  return cfg;
}

void write_manifest(const Context& ctx, const std::filesystem::path& artifact) {
  nlohmann::json m;
  m["subcommand"] = ctx.subcommand;
  m["toolkit_version"] = kToolkitVersion;
  m["config"] = resolved_config(*ctx.command);
  if (!ctx.config_file.is_null()) m["config_file"] = ctx.config_file;
  m["seed"] = m["config"].value("seed", nlohmann::json(nullptr));
  auto describe = [](const std::vector<std::filesystem::path>& paths) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : paths) {
      nlohmann::json e = {{"path", p.string()}};
      if (std::filesystem::is_regular_file(p)) e["sha256"] = sha256_file(p);
      arr.push_back(e);
    }
    return arr;
  };
  m["inputs"] = describe(ctx.inputs);
  m["outputs"] = describe(ctx.outputs);
  write_file_atomic(artifact.string() + ".manifest.json", m.dump(2) + "\n");
}

}  // namespace h2ke::cli
