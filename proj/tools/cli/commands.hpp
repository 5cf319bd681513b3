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

#include "common.hpp"

namespace h2ke::cli {

void register_tokenizer_train(CLI::App& app, Context& ctx);
void register_prepare_data(CLI::App& app, Context& ctx);
void register_train(CLI::App& app, Context& ctx);
void register_train_lm(CLI::App& app, Context& ctx);
void register_translate(CLI::App& app, Context& ctx);
void register_eval_bleu(CLI::App& app, Context& ctx);
void register_eval_ppl(CLI::App& app, Context& ctx);
void register_fit_bt(CLI::App& app, Context& ctx);
void register_analyze_translit(CLI::App& app, Context& ctx);
void register_serve_eval(CLI::App& app, Context& ctx);
void register_export_results(CLI::App& app, Context& ctx);

// Builds the full command tree. Each subcommand's callback stores its work
// in ctx.run.
std::unique_ptr<CLI::App> build_app(Context& ctx);

// Parses and runs one invocation; returns the process exit code.
int run_cli(const std::vector<std::string>& args, Streams io);

}  // namespace h2ke::cli
