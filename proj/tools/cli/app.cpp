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

#include <fstream>
#include <iostream>
#include <set>

#include "commands.hpp"

namespace h2ke::cli {

namespace {

std::string flag_name(const std::string& key) {
  std::string name = key;
  for (char& c : name) {
    if (c == '_') c = '-';
  }
  return name.rfind("--", 0) == 0 ? name : "--" + name;
}

bool given_on_command_line(const std::vector<std::string>& args, const CLI::Option& opt) {
  for (const auto& lname : opt.get_lnames()) {
    const std::string flag = "--" + lname;
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
  }
  for (const auto& sname : opt.get_snames()) {
    for (const auto& a : args) {
      if (a.rfind("-" + sname, 0) == 0) return true;
    }
  }
  return false;
}

std::string scalar_token(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  throw UsageError("--config: value of '" + key + "' must be a string, number, boolean or list");
}

// Returns the --config path and removes nothing: CLI11 still sees the
// option so it appears in help and is validated.
std::string find_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

// Appends the config file's values as command-line tokens for options the
// user did not set, so CLI11 applies the usual validation and precedence
// stays flags > config file > defaults. A config may be a flat object or
// carry one object per subcommand name.
void inject_config(CLI::App& sub, const nlohmann::json& doc, std::vector<std::string>& args) {
  const nlohmann::json* section = &doc;
  if (auto it = doc.find(sub.get_name()); it != doc.end() && it->is_object()) section = &*it;
  std::vector<std::string> extra;
  for (const auto& [key, value] : section->items()) {
    if (value.is_object()) continue;
    const auto flag = flag_name(key);
    const CLI::Option* opt = sub.get_option_no_throw(flag);
    if (opt == nullptr || flag == "--help" || flag == "--config") {
      throw UsageError("--config: unknown option '" + key + "' for " + sub.get_name());
    }
    if (given_on_command_line(args, *opt)) continue;
    if (opt->get_type_size() == 0) {
      if (!value.is_boolean()) throw UsageError("--config: '" + key + "' is a flag and takes true or false");
      if (value.get<bool>()) extra.push_back(flag);
      continue;
    }
    if (value.is_array()) {
      for (const auto& v : value) {
        extra.push_back(flag);
        extra.push_back(scalar_token(v, key));
      }
    } else if (!value.is_null()) {
      extra.push_back(flag);
      extra.push_back(scalar_token(value, key));
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
}

}  // namespace

std::unique_ptr<CLI::App> build_app(Context& ctx) {
  auto app = std::make_unique<CLI::App>("h2ke: multilingual translation toolkit for Hanja, Korean and English",
                                        "h2ke");
  app->set_version_flag("--version", kToolkitVersion, "Print the toolkit version and exit");
  app->option_defaults()->always_capture_default();
  app->require_subcommand(1);
  app->fallthrough();
  app->add_option("--config", ctx.config_path,
                  "JSON file of option values; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  register_tokenizer_train(*app, ctx);
  register_prepare_data(*app, ctx);
  register_train(*app, ctx);
  register_train_lm(*app, ctx);
  register_translate(*app, ctx);
  register_eval_bleu(*app, ctx);
  register_eval_ppl(*app, ctx);
  register_fit_bt(*app, ctx);
  register_analyze_translit(*app, ctx);
  register_serve_eval(*app, ctx);
  register_export_results(*app, ctx);
  for (auto* sub : app->get_subcommands({})) {
    sub->preparse_callback([&ctx, sub](std::size_t) {
      ctx.subcommand = sub->get_name();
      ctx.command = sub;
    });
  }
  return app;
}

int run_cli(const std::vector<std::string>& input, Streams io) {
  Context ctx{io, {}, {}, nullptr, {}, nullptr, {}, {}};
  auto app = build_app(ctx);
  std::vector<std::string> args = input;
  try {
    const auto config_path = find_config(args);
    if (!config_path.empty()) {
      const auto path = resolve(config_path);
      std::ifstream in(path);
      if (!in) throw UsageError("--config: File does not exist: " + path.string());
      try {
        ctx.config_file = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw UsageError("--config: " + path.string() + " is not valid JSON: " + e.what());
      }
      if (!ctx.config_file.is_object()) throw UsageError("--config: top level must be a JSON object");
      CLI::App* sub = nullptr;
      for (const auto& a : args) {
        if (a.empty() || a[0] == '-') continue;
        sub = app->get_subcommand_no_throw(a);
        if (sub) break;
      }
      if (sub) inject_config(*sub, ctx.config_file, args);
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app->exit(e, io.out, io.err);
    return code == 0 ? kOk : kUsageError;
  } catch (const UsageError& e) {
    io.err << "error: " << e.what() << "\n";
    return kUsageError;
  }
  if (!ctx.run) return kOk;
  try {
    ctx.run();
  } catch (const UsageError& e) {
    io.err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}

}  // namespace h2ke::cli
