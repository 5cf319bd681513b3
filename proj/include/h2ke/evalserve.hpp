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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"
#include "h2ke/metrics.hpp"

namespace h2ke::evalserve {

inline constexpr int kSchemaVersion = 1;

class NotFound : public Error {
 public:
  using Error::Error;
};

// The request is well-formed but conflicts with the current state (pair not
// assigned to the evaluator, study incomplete).
class Conflict : public Error {
 public:
  using Error::Error;
};

struct StudyConfig {
  int pairs_per_sheet = 50;
  int evaluators_per_pair = 3;
};

struct StudyItem {
  std::string id;
  std::vector<std::pair<std::string, std::string>> candidates;  // (system, text), study order
};

struct PairDef {
  std::string id;     // opaque, "p<N>"
  std::size_t item;   // index into Study::items
  std::string system_a;
  std::string system_b;
  std::string text_a;
  std::string text_b;
  std::size_t sheet = 0;
};

// One evaluator slot: a token, a sheet, and that evaluator's private pair
// order and side assignment.
struct Assignment {
  std::string token;
  std::size_t sheet = 0;
  std::vector<std::size_t> order;  // indices into Study::pairs
  std::vector<bool> a_on_left;     // parallel to order
};

struct Study {
  std::string id;
  std::vector<std::string> systems;
  std::vector<StudyItem> items;
  StudyConfig config;
  std::uint64_t seed = 0;
  std::vector<PairDef> pairs;
  std::vector<std::vector<std::size_t>> sheets;  // pair indices per sheet
  std::vector<Assignment> assignments;
  nlohmann::json payload;  // the creation payload, kept for snapshots
};

// Builds the study from a creation payload:
//   {"version": 1, "systems": [...]?, "items": [{"id", "candidates": {system: text}}],
//    "config": {"pairs_per_sheet", "evaluators_per_pair"}?, "seed": n?}
// Without "systems" every item must offer the same system set (sorted by
// name); with it, every item offers two or more of the declared systems and
// pairs are oriented in declaration order. Sheets, pair orders and sides
// depend only on the payload; tokens come from `make_token`.
Study build_study(const nlohmann::json& payload, const std::string& id,
                  const std::function<std::string()>& make_token);

enum class Choice { kLeft, kRight, kNoDifference };
Choice parse_choice(const std::string& s);
std::string to_string(Choice c);

struct Response {
  std::string token;
  std::string pair_id;
  Choice choice = Choice::kNoDifference;
  std::string received_at;  // ISO-8601 UTC
  int revision = 1;         // increments on every resubmission
};

// Study state with an append-only JSONL log and periodic snapshots in
// `dir`. Every acknowledged write has been flushed to disk. Thread-safe.
// A read-only store never touches the files, so it can inspect a directory
// that a running server is writing to.
class EvalStore {
 public:
  explicit EvalStore(std::filesystem::path dir, std::size_t snapshot_every = 500,
                     bool read_only = false);
  ~EvalStore();
  EvalStore(const EvalStore&) = delete;
  EvalStore& operator=(const EvalStore&) = delete;

  nlohmann::json create_study(const nlohmann::json& payload);
  nlohmann::json study_info(const std::string& id) const;
  nlohmann::json next_pair(const std::string& token) const;
  nlohmann::json submit(const nlohmann::json& payload);
  nlohmann::json results(const std::string& id, bool partial) const;
  std::string export_jsonl(const std::string& id) const;

  // Writes a snapshot; later recovery replays only the log written after it.
  void snapshot();

  std::size_t study_count() const;

 private:
  struct Located {
    std::size_t study;
    std::size_t assignment;
  };

  void append(const nlohmann::json& record);
  void apply(const nlohmann::json& record);
  void recover();
  void write_snapshot_locked();
  const Located& locate(const std::string& token) const;
  const Study& find_study(const std::string& id) const;

  std::filesystem::path dir_;
  std::size_t snapshot_every_;
  bool read_only_;
  std::size_t since_snapshot_ = 0;
  int log_fd_ = -1;
  std::uint64_t log_bytes_ = 0;
  mutable std::shared_mutex mutex_;
  std::vector<Study> studies_;
  std::map<std::string, Located> tokens_;
  // Current response per (token, pair id), and every submission in order.
  std::map<std::pair<std::string, std::string>, Response> responses_;
  std::vector<Response> audit_;
};

// HTTP front end:
//   POST /studies                      create a study
//   GET  /studies/{id}                 admin view (systems, sheets, tokens)
//   GET  /next?token=T                 next blinded pair for an evaluator
//   POST /responses                    {"token", "pair_id", "choice"}
//   GET  /studies/{id}/results[?partial=1]
//   GET  /studies/{id}/export          JSONL of de-blinded responses
// Optionally serves a static directory (the survey UI) at "/".
class EvalServer {
 public:
  EvalServer(EvalStore& store, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~EvalServer();

  // Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  // Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace h2ke::evalserve
