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

#include <csignal>
#include <memory>
#include <pthread.h>
#include <thread>

#include "commands.hpp"
#include "h2ke/evalserve.hpp"

namespace h2ke::cli {

void register_serve_eval(CLI::App& app, Context& ctx) {
  struct Opts {
    std::filesystem::path data_dir, static_dir, port_file;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::size_t snapshot_every = 500;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("serve-eval", "Run the human-evaluation HTTP service");
  add_output(*sub, "--data-dir", o->data_dir, "Directory holding the response log and snapshot");
  sub->add_option("--host", o->host, "Interface to listen on");
  sub->add_option("--port", o->port, "TCP port; 0 picks a free one")->check(CLI::Range(0, 65535));
  sub->add_option("--static", o->static_dir, "Directory served at / (the survey front end)")
      ->transform([](const std::string& s) { return resolve(s).string(); })
      ->check(CLI::ExistingDirectory);
  add_output(*sub, "--port-file", o->port_file, "Write the bound port number to this file", false);
  sub->add_option("--snapshot-every", o->snapshot_every, "Log records between snapshots")
      ->check(CLI::PositiveNumber);
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      std::filesystem::create_directories(o->data_dir);
      evalserve::EvalStore store(o->data_dir, o->snapshot_every);
      std::optional<std::filesystem::path> st;
      if (!o->static_dir.empty()) st = o->static_dir;

      sigset_t stop_signals, previous;
      sigemptyset(&stop_signals);
      sigaddset(&stop_signals, SIGINT);
      sigaddset(&stop_signals, SIGTERM);
      pthread_sigmask(SIG_BLOCK, &stop_signals, &previous);

      evalserve::EvalServer server(store, st);
      const int port = server.bind(o->host, o->port);
      if (!o->port_file.empty()) write_file_atomic(o->port_file, std::to_string(port) + "\n");
      ctx.io.out << nlohmann::json{{"host", o->host}, {"port", port}}.dump() << std::endl;

      std::thread waiter([&] {
        int sig = 0;
        sigwait(&stop_signals, &sig);
        server.stop();
      });
      server.serve();
      pthread_kill(waiter.native_handle(), SIGTERM);
      waiter.join();
      pthread_sigmask(SIG_SETMASK, &previous, nullptr);
      ctx.io.err << "serve-eval: stopped\n";
    };
  });
}

void register_export_results(CLI::App& app, Context& ctx) {
  struct Opts {
    std::filesystem::path data_dir, out;
    std::string study, what = "results";
    bool partial = false;
  };
  auto o = std::make_shared<Opts>();
  auto* sub = app.add_subcommand("export-results", "Export responses or aggregated results of a study");
  add_output(*sub, "--data-dir", o->data_dir, "Data directory of the evaluation service");
  sub->add_option("--study", o->study, "Study id, e.g. study-1")->required();
  sub->add_option("--what", o->what, "responses (JSONL, one line per response) or results (JSON)")
      ->check(CLI::IsMember({"responses", "results"}));
  sub->add_flag("--partial", o->partial, "Aggregate results even if some slots are unanswered");
  add_output(*sub, "--out", o->out, "Output file (default: stdout)", false);
  sub->callback([o, &ctx] {
    ctx.run = [o, &ctx] {
      if (!std::filesystem::is_directory(o->data_dir)) {
        throw Error("data directory not found: " + o->data_dir.string());
      }
      const evalserve::EvalStore store(o->data_dir, 500, true);
      const std::string text = o->what == "responses"
                                   ? store.export_jsonl(o->study)
                                   : store.results(o->study, o->partial).dump(2) + "\n";
      if (o->out.empty()) {
        ctx.io.out << text;
        return;
      }
      write_file_atomic(o->out, text);
      ctx.outputs = {o->out};
      write_manifest(ctx, o->out);
    };
  });
}

}  // namespace h2ke::cli
