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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <spawn.h>
#include <sstream>
#include <sys/wait.h>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "h2ke/hash.hpp"
#include "test_support.hpp"

extern char** environ;

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kSnapshots = H2KE_SNAPSHOT_DIR;
const fs::path kToy = fs::path(H2KE_FIXTURE_DIR) / "toy_corpus.tsv";

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = h2ke::cli::run_cli(args, {out, err});
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

bool has_partial_files(const fs::path& dir) {
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().extension() == ".partial") return true;
  }
  return false;
}

void check_snapshot(const std::string& name, const std::string& actual) {
  const auto path = kSnapshots / "help" / (name + ".txt");
  if (std::getenv("H2KE_UPDATE_SNAPSHOTS")) {
    fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << actual;
  }
  INFO("snapshot " << path << " (set H2KE_UPDATE_SNAPSHOTS=1 to regenerate)");
  REQUIRE(fs::exists(path));
  CHECK(slurp(path) == actual);
}

const std::vector<std::string> kSubcommands = {
    "tokenizer-train", "prepare-data", "train",   "train-lm",         "translate",  "eval-bleu",
    "eval-ppl",        "fit-bt",       "analyze-translit", "serve-eval", "export-results"};

// Small training flags shared by the pipeline cases.
std::vector<std::string> train_args(const h2ke::testing::TempDir& d, const std::string& out) {
  return {"train",         "--train",          (d / "data/train.jsonl").string(),
          "--valid",       (d / "data/valid.jsonl").string(),
          "--spm",         (d / "sp.json").string(),
          "--out",         (d / out).string(),
          "--max-steps",   "40",
          "--validate-every", "20",
          "--keep-best",   "2",
          "--average",     "2",
          "--max-seq-len", "64",
          "--seed",        "5"};
}

void build_data(const h2ke::testing::TempDir& d) {
  REQUIRE(run({"tokenizer-train", "--in", kToy.string(), "--out", (d / "sp.json").string(),
               "--vocab-size", "200"})
              .code == 0);
  REQUIRE(run({"prepare-data", "--in", kToy.string(), "--out-dir", (d / "data").string(),
               "--split", "0.6,0.2,0.2", "--seed", "3"})
              .code == 0);
}

}  // namespace

TEST_CASE("help output matches the snapshots") {
  const auto top = run({"--help"});
  CHECK(top.code == 0);
  check_snapshot("h2ke", top.out);
  for (const auto& sub : kSubcommands) {
    const auto r = run({sub, "--help"});
    CHECK(r.code == 0);
    check_snapshot(sub, r.out);
  }
}

TEST_CASE("every option carries a description") {
  std::ostringstream out, err;
  h2ke::cli::Context ctx{{out, err}, {}, {}, nullptr, {}, nullptr, {}, {}};
  const auto app = h2ke::cli::build_app(ctx);
  CHECK(app->get_subcommands({}).size() == kSubcommands.size());
  for (const auto* sub : app->get_subcommands({})) {
    CHECK_FALSE(sub->get_description().empty());
    for (const auto* opt : sub->get_options()) {
      INFO(sub->get_name() << " " << opt->get_name());
      CHECK_FALSE(opt->get_description().empty());
    }
  }
}

TEST_CASE("exit codes") {
  h2ke::testing::TempDir d("cli-exit");
  CHECK(run({}).code == 1);
  CHECK(run({"no-such-command"}).code == 1);
  CHECK(run({"eval-bleu", "--bogus-flag"}).code == 1);
  CHECK(run({"--version"}).code == 0);

  SUBCASE("missing input names its path") {
    const auto missing = (d / "absent.txt").string();
    const auto r = run({"eval-bleu", "--hyp", missing, "--ref", missing});
    CHECK(r.code == 1);
    CHECK((r.out + r.err).find(missing) != std::string::npos);
  }
  SUBCASE("flag combination errors are usage errors") {
    std::ofstream(d / "h.txt") << "a\n";
    const auto r = run({"eval-ppl", "--system", "A=" + (d / "h.txt").string(), "--scorer", "uniform",
                        "--out", (d / "o.jsonl").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("--vocab-size") != std::string::npos);
  }
  SUBCASE("runtime failures exit with 2 and leave no artifact") {
    std::ofstream(d / "bad.ckpt") << "not a checkpoint";
    std::ofstream(d / "sp.json") << "{}";
    std::ofstream(d / "in.txt") << "x\n";
    const auto r = run({"translate", "--model", (d / "bad.ckpt").string(), "--spm",
                        (d / "sp.json").string(), "--tgt", "cKo", "--in", (d / "in.txt").string(),
                        "--out", (d / "out.txt").string()});
    CHECK(r.code == 2);
    CHECK_FALSE(r.err.empty());
    CHECK_FALSE(fs::exists(d / "out.txt"));
  }
  SUBCASE("mismatched line counts") {
    std::ofstream(d / "h.txt") << "a\nb\n";
    std::ofstream(d / "r.txt") << "a\n";
    const auto r = run({"eval-bleu", "--hyp", (d / "h.txt").string(), "--ref", (d / "r.txt").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("r.txt") != std::string::npos);
  }
}

TEST_CASE("eval-bleu prints the report as JSON") {
  h2ke::testing::TempDir d("cli-bleu");
  std::ofstream(d / "h.txt") << "the cat sat on the mat\n";
  std::ofstream(d / "r.txt") << "the cat sat on the mat\n";
  const auto r = run({"eval-bleu", "--hyp", (d / "h.txt").string(), "--ref", (d / "r.txt").string(),
                      "--pretokenize", "whitespace"});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["score"].get<double>() == doctest::Approx(100.0));
  CHECK(j["pretokenize"] == "whitespace");
}

TEST_CASE("config file precedence: flags over config over defaults") {
  h2ke::testing::TempDir d("cli-config");
  std::ofstream(d / "cfg.json") << json{{"tokenizer-train", {{"vocab_size", 150}, {"max-piece-len", 6}}}}.dump();
  const auto out = (d / "sp.json").string();
  auto r = run({"tokenizer-train", "--config", (d / "cfg.json").string(), "--in", kToy.string(),
                "--out", out, "--max-piece-len", "8"});
  REQUIRE(r.code == 0);
  const auto m = json::parse(slurp(out + ".manifest.json"));
  CHECK(m["config"]["vocab-size"] == "150");
  CHECK(m["config"]["max-piece-len"] == "8");
  CHECK(m["config"]["shrink"] == "0.75");
  CHECK(m["config_file"]["tokenizer-train"]["vocab_size"] == 150);
  CHECK(m["subcommand"] == "tokenizer-train");
  CHECK(m["toolkit_version"] == h2ke::cli::kToolkitVersion);
  CHECK(m["outputs"][0]["sha256"] == h2ke::sha256_file(out));

  std::ofstream(d / "bad.json") << json{{"vocab_sise", 150}}.dump();
  r = run({"tokenizer-train", "--config", (d / "bad.json").string(), "--in", kToy.string(), "--out", out});
  CHECK(r.code == 1);
  CHECK(r.err.find("vocab_sise") != std::string::npos);
}

TEST_CASE("H2KE_DATA_DIR roots relative paths") {
  h2ke::testing::TempDir d("cli-root");
  fs::copy_file(kToy, d / "toy.tsv");
  ::setenv("H2KE_DATA_DIR", d.path().c_str(), 1);
  const auto r = run({"tokenizer-train", "--in", "toy.tsv", "--out", "sp.json", "--vocab-size", "120"});
  ::unsetenv("H2KE_DATA_DIR");
  CHECK(r.code == 0);
  CHECK(fs::exists(d / "sp.json"));
  CHECK(fs::exists(d / "sp.json.manifest.json"));
}

TEST_CASE("end-to-end pipeline on the toy corpus") {
  h2ke::testing::TempDir d("cli-e2e");
  build_data(d);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "stats.txt"}) {
    CHECK(fs::exists(d / "data" / f));
  }
  REQUIRE(run(train_args(d, "m.ckpt")).code == 0);
  CHECK(fs::exists(d / "m.ckpt.manifest.json"));
  CHECK(count_lines(d / "m.ckpt.train.jsonl") == 2);

  fs::path src, ref;
  for (const auto& e : fs::directory_iterator(d / "data")) {
    const auto name = e.path().filename().string();
    if (name.rfind("test.", 0) == 0 && name.size() > 8 && name.substr(name.size() - 8) == ".src.txt") {
      src = e.path();
      ref = fs::path(e.path().string().substr(0, e.path().string().size() - 8) + ".ref.txt");
      break;
    }
  }
  REQUIRE_FALSE(src.empty());
  const auto pair = src.filename().string();
  const auto tgt = pair.substr(pair.find('-') + 1, pair.find(".src") - pair.find('-') - 1);
  const auto hyp = (d / "hyp.txt").string();
  REQUIRE(run({"translate", "--model", (d / "m.ckpt").string(), "--spm", (d / "sp.json").string(),
               "--tgt", tgt, "--in", src.string(), "--out", hyp, "--max-len", "24"})
              .code == 0);
  CHECK(count_lines(hyp) == count_lines(src));

  const auto bleu = run({"eval-bleu", "--hyp", hyp, "--ref", ref.string(), "--out",
                         (d / "bleu.json").string()});
  REQUIRE(bleu.code == 0);
  const auto j = json::parse(bleu.out);
  CHECK(j["score"].get<double>() >= 0.0);
  CHECK(j["score"].get<double>() <= 100.0);
  CHECK(j["sentences"] == count_lines(src));
  CHECK_FALSE(has_partial_files(d.path()));
}

TEST_CASE("seeded subcommands are bit-reproducible") {
  h2ke::testing::TempDir d("cli-repro");
  build_data(d);
  const auto sp_hash = h2ke::sha256_file(d / "sp.json");
  const auto train_hash = h2ke::sha256_file(d / "data/train.jsonl");
  REQUIRE(run({"tokenizer-train", "--in", kToy.string(), "--out", (d / "sp2.json").string(),
               "--vocab-size", "200"})
              .code == 0);
  REQUIRE(run({"prepare-data", "--in", kToy.string(), "--out-dir", (d / "data2").string(),
               "--split", "0.6,0.2,0.2", "--seed", "3"})
              .code == 0);
  CHECK(h2ke::sha256_file(d / "sp2.json") == sp_hash);
  CHECK(h2ke::sha256_file(d / "data2/train.jsonl") == train_hash);
  CHECK(slurp(d / "data2/valid.jsonl") == slurp(d / "data/valid.jsonl"));

  REQUIRE(run(train_args(d, "a.ckpt")).code == 0);
  REQUIRE(run(train_args(d, "b.ckpt")).code == 0);
  CHECK(h2ke::sha256_file(d / "a.ckpt") == h2ke::sha256_file(d / "b.ckpt"));

  std::ofstream(d / "lm.txt") << "가나다\n다나가\n가가나\n나다가\n";
  for (const char* out : {"lm1.ckpt", "lm2.ckpt"}) {
    REQUIRE(run({"train-lm", "--in", (d / "lm.txt").string(), "--spm", (d / "sp.json").string(),
                 "--out", (d / out).string(), "--max-steps", "10", "--validate-every", "5",
                 "--seed", "9", "--max-seq-len", "32"})
                .code == 0);
  }
  CHECK(h2ke::sha256_file(d / "lm1.ckpt") == h2ke::sha256_file(d / "lm2.ckpt"));

  auto changed = train_args(d, "c.ckpt");
  changed.back() = "6";
  REQUIRE(run(changed).code == 0);
  CHECK(h2ke::sha256_file(d / "c.ckpt") != h2ke::sha256_file(d / "a.ckpt"));
}

TEST_CASE("perplexity comparison feeds the Bradley-Terry fit") {
  h2ke::testing::TempDir d("cli-ppl");
  std::ofstream(d / "a.txt") << "a\nab\nabc\n";
  std::ofstream(d / "b.txt") << "aa\nab\nabcd\n";
  const auto ppl = (d / "ppl.jsonl").string();
  auto r = run({"eval-ppl", "--system", "A=" + (d / "a.txt").string(), "--system",
                "B=" + (d / "b.txt").string(), "--scorer", "uniform", "--vocab-size", "7", "--out", ppl});
  REQUIRE(r.code == 0);
  CHECK(count_lines(ppl) == 6);
  // A uniform scorer gives every sentence perplexity V, so all items tie and
  // no decisive outcome links the two systems.
  r = run({"fit-bt", "--ppl", ppl});
  CHECK(r.code == 2);
  CHECK(r.err.find("disconnected") != std::string::npos);

  std::ofstream oc(d / "scripted.jsonl");
  for (int i = 0; i < 8; ++i) {
    oc << json{{"item", std::to_string(i)}, {"system_a", "X"}, {"system_b", "Y"},
               {"result", i < 6 ? "A_wins" : "B_wins"}}.dump()
       << "\n";
  }
  oc.close();
  r = run({"fit-bt", "--outcomes", (d / "scripted.jsonl").string()});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["pairs"][0]["probability"].get<double>() == doctest::Approx(0.75));
  r = run({"fit-bt", "--outcomes", (d / "scripted.jsonl").string(), "--table"});
  CHECK(r.out.find("75.00") != std::string::npos);
}

TEST_CASE("analyze-translit reports archaic annotations") {
  h2ke::testing::TempDir d("cli-translit");
  std::ofstream(d / "old.txt") << "청주목(淸州牧)을 고치었다\n비가 왔다\n";
  std::ofstream(d / "ref.txt") << "청주목을 고쳤다\n비가 왔다\n";
  std::ofstream(d / "cand.txt") << "청주목을 고쳤다\n비가 왔다\n";
  const auto r = run({"analyze-translit", "--old", (d / "old.txt").string(), "--ref",
                      (d / "ref.txt").string(), "--candidate", (d / "cand.txt").string()});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j["archaic_occurrences"] == 1);
  CHECK(j["replacement_rate"].get<double>() == doctest::Approx(1.0));
}

TEST_CASE("serve-eval runs as a process and stops on SIGTERM") {
  h2ke::testing::TempDir d("cli-serve");
  const auto port_file = (d / "port").string();
  std::vector<std::string> argv_s = {H2KE_CLI_BINARY, "serve-eval", "--data-dir",
                                     (d / "store").string(), "--port", "0", "--port-file", port_file};
  std::vector<char*> argv;
  for (auto& s : argv_s) argv.push_back(s.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  REQUIRE(posix_spawn(&pid, argv[0], nullptr, nullptr, argv.data(), environ) == 0);
  for (int i = 0; i < 100 && !fs::exists(port_file); ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  REQUIRE(fs::exists(port_file));
  const int port = std::stoi(slurp(port_file));

  httplib::Client cli("127.0.0.1", port);
  const json payload = {{"version", 1},
                        {"systems", {"X", "Y"}},
                        {"items", {{{"id", "i1"}, {"candidates", {{"X", "one"}, {"Y", "two"}}}}}},
                        {"seed", 4}};
  auto res = cli.Post("/studies", payload.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  const auto info = json::parse(res->body);
  const auto token = info["sheets"][0]["evaluators"][0].get<std::string>();
  res = cli.Get("/next?token=" + token);
  REQUIRE(res);
  const auto pair_id = json::parse(res->body)["pair_id"].get<std::string>();
  res = cli.Post("/responses", json{{"token", token}, {"pair_id", pair_id}, {"choice", "left"}}.dump(),
                 "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);

  ::kill(pid, SIGTERM);
  int status = 0;
  REQUIRE(waitpid(pid, &status, 0) == pid);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);

  const auto r = run({"export-results", "--data-dir", (d / "store").string(), "--study",
                      info["study_id"].get<std::string>(), "--what", "responses"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find(pair_id) != std::string::npos);
  const auto partial = run({"export-results", "--data-dir", (d / "store").string(), "--study",
                            info["study_id"].get<std::string>(), "--partial"});
  REQUIRE(partial.code == 0);
  CHECK(json::parse(partial.out)["coverage"]["responses"] == 1);
}
