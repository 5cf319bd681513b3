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

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

#include <fcntl.h>
#include <openssl/rand.h>
#include <unistd.h>

#include "h2ke/evalserve.hpp"

namespace h2ke::evalserve {

namespace {

constexpr const char* kLogName = "evalserve.log.jsonl";
constexpr const char* kSnapshotName = "evalserve.snapshot.json";

std::string random_token() {
  unsigned char buf[12];
  if (RAND_bytes(buf, sizeof buf) != 1) throw Error("cannot generate evaluator token");
  static const char* hex = "0123456789abcdef";
  std::string out = "t";
  for (unsigned char c : buf) {
    out += hex[c >> 4];
    out += hex[c & 15];
  }
  return out;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

void sync_fd(int fd, const std::string& what) {
  if (fdatasync(fd) != 0) throw Error("cannot sync " + what + ": " + std::strerror(errno));
}

nlohmann::json progress_json(std::size_t answered, std::size_t total) {
  return {{"answered", answered}, {"total", total}};
}

}  // namespace

EvalStore::EvalStore(std::filesystem::path dir, std::size_t snapshot_every, bool read_only)
    : dir_(std::move(dir)), snapshot_every_(snapshot_every), read_only_(read_only) {
  if (read_only_) {
    if (!std::filesystem::is_directory(dir_)) {
      throw NotFound("no evaluation store at " + dir_.string());
    }
    recover();
    return;
  }
  std::filesystem::create_directories(dir_);
  recover();
  const auto log_path = dir_ / kLogName;
  log_fd_ = ::open(log_path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (log_fd_ < 0) {
    throw Error("cannot open " + log_path.string() + ": " + std::strerror(errno));
  }
}

EvalStore::~EvalStore() {
  if (read_only_) return;
  try {
    std::unique_lock lock(mutex_);
    if (since_snapshot_ > 0) write_snapshot_locked();
  } catch (const std::exception& e) {
    std::cerr << "evalserve: final snapshot failed: " << e.what() << "\n";
  }
  if (log_fd_ >= 0) ::close(log_fd_);
}

void EvalStore::recover() {
  std::uint64_t offset = 0;
  const auto snap_path = dir_ / kSnapshotName;
  if (std::filesystem::exists(snap_path)) {
    std::ifstream in(snap_path);
    nlohmann::json snap;
    try {
      in >> snap;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corrupt snapshot " + snap_path.string() + ": " + e.what());
    }
    offset = snap.at("log_bytes").get<std::uint64_t>();
    for (const auto& r : snap.at("records")) apply(r);
  }

  const auto log_path = dir_ / kLogName;
  log_bytes_ = offset;
  if (!std::filesystem::exists(log_path)) return;
  const auto size = std::filesystem::file_size(log_path);
  if (size < offset) throw ParseError("log is shorter than the snapshot says; refusing to start");
  std::ifstream in(log_path, std::ios::binary);
  in.seekg(static_cast<std::streamoff>(offset));
  std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < rest.size()) {
    const auto nl = rest.find('\n', pos);
    if (nl == std::string::npos) {
      // A write interrupted before its newline was never acknowledged.
      if (!read_only_) {
        std::cerr << "evalserve: dropping incomplete trailing log record\n";
        std::filesystem::resize_file(log_path, offset + pos);
      }
      break;
    }
    ++line_no;
    const auto line = rest.substr(pos, nl - pos);
    try {
      apply(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("corrupt log record " + std::to_string(line_no) + " after the snapshot: " +
                       e.what());
    }
    pos = nl + 1;
    log_bytes_ = offset + pos;
    ++since_snapshot_;
  }
}

void EvalStore::append(const nlohmann::json& record) {
  if (read_only_) throw Conflict("the evaluation store is open read-only");
  const auto line = record.dump() + "\n";
  std::size_t done = 0;
  while (done < line.size()) {
    const auto n = ::write(log_fd_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(std::string("cannot append to the response log: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  sync_fd(log_fd_, "response log");
  log_bytes_ += line.size();
}

void EvalStore::apply(const nlohmann::json& record) {
  const auto type = record.at("type").get<std::string>();
  if (type == "study") {
    const auto tokens = record.at("tokens").get<std::vector<std::string>>();
    std::size_t next = 0;
    auto st = build_study(record.at("payload"), record.at("id").get<std::string>(), [&] {
      if (next >= tokens.size()) throw ParseError("study record has too few tokens");
      return tokens[next++];
    });
    const auto index = studies_.size();
    for (std::size_t a = 0; a < st.assignments.size(); ++a) {
      tokens_[st.assignments[a].token] = {index, a};
    }
    studies_.push_back(std::move(st));
  } else if (type == "response") {
    Response r;
    r.token = record.at("token").get<std::string>();
    r.pair_id = record.at("pair_id").get<std::string>();
    r.choice = parse_choice(record.at("choice").get<std::string>());
    r.received_at = record.at("received_at").get<std::string>();
    const auto key = std::make_pair(r.token, r.pair_id);
    const auto it = responses_.find(key);
    r.revision = it == responses_.end() ? 1 : it->second.revision + 1;
    responses_[key] = r;
    audit_.push_back(std::move(r));
  } else {
    throw ParseError("unknown log record type '" + type + "'");
  }
}

void EvalStore::write_snapshot_locked() {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& st : studies_) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& a : st.assignments) tokens.push_back(a.token);
    records.push_back({{"type", "study"}, {"id", st.id}, {"payload", st.payload}, {"tokens", tokens}});
  }
  for (const auto& r : audit_) {
    records.push_back({{"type", "response"},
                       {"token", r.token},
                       {"pair_id", r.pair_id},
                       {"choice", to_string(r.choice)},
                       {"received_at", r.received_at}});
  }
  const nlohmann::json snap = {{"version", kSchemaVersion}, {"log_bytes", log_bytes_},
                               {"records", records}};
  const auto path = dir_ / kSnapshotName;
  const auto tmp = dir_ / (std::string(kSnapshotName) + ".partial");
  {
    const auto text = snap.dump();
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("cannot write snapshot: " + std::string(std::strerror(errno)));
    std::size_t done = 0;
    while (done < text.size()) {
      const auto n = ::write(fd, text.data() + done, text.size() - done);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) {
        ::close(fd);
        throw Error("cannot write snapshot: " + std::string(std::strerror(errno)));
      }
      done += static_cast<std::size_t>(n);
    }
    sync_fd(fd, "snapshot");
    ::close(fd);
  }
  std::filesystem::rename(tmp, path);
  since_snapshot_ = 0;
}

void EvalStore::snapshot() {
  if (read_only_) throw Conflict("the evaluation store is open read-only");
  std::unique_lock lock(mutex_);
  write_snapshot_locked();
}

std::size_t EvalStore::study_count() const {
  std::shared_lock lock(mutex_);
  return studies_.size();
}

const Study& EvalStore::find_study(const std::string& id) const {
  for (const auto& st : studies_) {
    if (st.id == id) return st;
  }
  throw NotFound("no study '" + id + "'");
}

const EvalStore::Located& EvalStore::locate(const std::string& token) const {
  const auto it = tokens_.find(token);
  if (it == tokens_.end()) throw NotFound("unknown evaluator token");
  return it->second;
}

nlohmann::json EvalStore::create_study(const nlohmann::json& payload) {
  std::unique_lock lock(mutex_);
  const std::string id = "study-" + std::to_string(studies_.size() + 1);
  std::vector<std::string> tokens;
  // Validates the payload and draws the tokens before anything is logged.
  build_study(payload, id, [&] {
    tokens.push_back(random_token());
    return tokens.back();
  });
  const nlohmann::json record = {{"type", "study"}, {"id", id}, {"payload", payload},
                                 {"tokens", tokens}};
  append(record);
  apply(record);
  if (++since_snapshot_ >= snapshot_every_) write_snapshot_locked();
  lock.unlock();
  return study_info(id);
}

nlohmann::json EvalStore::study_info(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto& st = find_study(id);
  nlohmann::json sheets = nlohmann::json::array();
  for (std::size_t s = 0; s < st.sheets.size(); ++s) {
    nlohmann::json pairs = nlohmann::json::array(), evaluators = nlohmann::json::array();
    for (auto p : st.sheets[s]) pairs.push_back(st.pairs[p].id);
    for (const auto& a : st.assignments) {
      if (a.sheet == s) evaluators.push_back(a.token);
    }
    sheets.push_back({{"sheet", "sheet-" + std::to_string(s + 1)},
                      {"pairs", pairs},
                      {"evaluators", evaluators}});
  }
  std::size_t answered = 0;
  for (const auto& a : st.assignments) {
    for (auto p : a.order) answered += responses_.count({a.token, st.pairs[p].id});
  }
  return {{"version", kSchemaVersion},
          {"study_id", st.id},
          {"systems", st.systems},
          {"config",
           {{"pairs_per_sheet", st.config.pairs_per_sheet},
            {"evaluators_per_pair", st.config.evaluators_per_pair}}},
          {"seed", st.seed},
          {"items", st.items.size()},
          {"pairs", st.pairs.size()},
          {"sheets", sheets},
          {"responses", answered},
          {"expected_responses", st.pairs.size() * st.config.evaluators_per_pair}};
}

nlohmann::json EvalStore::next_pair(const std::string& token) const {
  std::shared_lock lock(mutex_);
  const auto loc = locate(token);
  const auto& st = studies_[loc.study];
  const auto& a = st.assignments[loc.assignment];
  std::size_t answered = 0;
  std::optional<std::size_t> next;
  for (std::size_t k = 0; k < a.order.size(); ++k) {
    if (responses_.count({token, st.pairs[a.order[k]].id})) {
      ++answered;
    } else if (!next) {
      next = k;
    }
  }
  nlohmann::json out = {{"version", kSchemaVersion},
                        {"progress", progress_json(answered, a.order.size())}};
  if (!next) {
    out["status"] = "done";
    return out;
  }
  const auto& p = st.pairs[a.order[*next]];
  const bool a_left = a.a_on_left[*next];
  out["status"] = "pair";
  out["pair_id"] = p.id;
  out["left"] = a_left ? p.text_a : p.text_b;
  out["right"] = a_left ? p.text_b : p.text_a;
  out["progress"]["position"] = *next + 1;
  return out;
}

nlohmann::json EvalStore::submit(const nlohmann::json& payload) {
  if (!payload.is_object()) throw ParseError("response payload must be a JSON object");
  if (payload.contains("version") && payload["version"] != kSchemaVersion) {
    throw ParseError("unsupported response schema version " + payload["version"].dump());
  }
  for (const char* key : {"token", "pair_id", "choice"}) {
    if (!payload.contains(key) || !payload[key].is_string()) {
      throw ParseError(std::string("response needs a string field '") + key + "'");
    }
  }
  const auto token = payload["token"].get<std::string>();
  const auto pair_id = payload["pair_id"].get<std::string>();
  const auto choice = parse_choice(payload["choice"].get<std::string>());

  std::unique_lock lock(mutex_);
  const auto loc = locate(token);
  const auto& st = studies_[loc.study];
  const auto& a = st.assignments[loc.assignment];
  const bool assigned = std::any_of(a.order.begin(), a.order.end(),
                                    [&](std::size_t p) { return st.pairs[p].id == pair_id; });
  if (!assigned) throw Conflict("pair '" + pair_id + "' is not assigned to this evaluator");
  const nlohmann::json record = {{"type", "response"},
                                 {"token", token},
                                 {"pair_id", pair_id},
                                 {"choice", to_string(choice)},
                                 {"received_at", utc_now()}};
  append(record);
  apply(record);
  const int revision = responses_.at({token, pair_id}).revision;
  std::size_t answered = 0;
  for (auto p : a.order) answered += responses_.count({token, st.pairs[p].id});
  if (++since_snapshot_ >= snapshot_every_) write_snapshot_locked();
  return {{"version", kSchemaVersion},
          {"status", "recorded"},
          {"pair_id", pair_id},
          {"revision", revision},
          {"progress", progress_json(answered, a.order.size())}};
}

nlohmann::json EvalStore::results(const std::string& id, bool partial) const {
  std::shared_lock lock(mutex_);
  const auto& st = find_study(id);
  const auto expected = static_cast<std::size_t>(st.config.evaluators_per_pair);

  std::vector<std::vector<metrics::Vote>> votes(st.pairs.size());
  std::size_t total_responses = 0;
  for (const auto& a : st.assignments) {
    for (std::size_t k = 0; k < a.order.size(); ++k) {
      const auto it = responses_.find({a.token, st.pairs[a.order[k]].id});
      if (it == responses_.end()) continue;
      ++total_responses;
      metrics::Vote v = metrics::Vote::kNoDifference;
      if (it->second.choice != Choice::kNoDifference) {
        const bool left = it->second.choice == Choice::kLeft;
        v = left == a.a_on_left[k] ? metrics::Vote::kA : metrics::Vote::kB;
      }
      votes[a.order[k]].push_back(v);
    }
  }
  std::size_t complete = 0;
  for (const auto& v : votes) complete += v.size() >= expected;
  const nlohmann::json coverage = {{"pairs", st.pairs.size()},
                                   {"complete_pairs", complete},
                                   {"responses", total_responses},
                                   {"expected_responses", st.pairs.size() * expected}};
  if (complete < st.pairs.size() && !partial) {
    throw Conflict("study '" + id + "' is incomplete: " + std::to_string(complete) + " of " +
                   std::to_string(st.pairs.size()) +
                   " pairs have all responses (request partial results to see them)");
  }

  nlohmann::json decisions = nlohmann::json::array();
  std::vector<metrics::SheetDecision> sheet_decisions;
  for (std::size_t i = 0; i < st.pairs.size(); ++i) {
    if (votes[i].size() < expected) continue;
    const auto& p = st.pairs[i];
    const auto d = metrics::strict_majority(votes[i]);
    nlohmann::json vj = nlohmann::json::array();
    for (auto v : votes[i]) vj.push_back(metrics::to_string(v));
    const std::string sheet = "sheet-" + std::to_string(p.sheet + 1);
    decisions.push_back({{"pair_id", p.id},
                         {"item", st.items[p.item].id},
                         {"sheet", sheet},
                         {"system_a", p.system_a},
                         {"system_b", p.system_b},
                         {"votes", vj},
                         {"decision", metrics::to_string(d)},
                         {"winner", d == metrics::Vote::kA   ? nlohmann::json(p.system_a)
                                    : d == metrics::Vote::kB ? nlohmann::json(p.system_b)
                                                             : nlohmann::json(nullptr)}});
    sheet_decisions.push_back({sheet, p.system_a, p.system_b, d});
  }
  return {{"version", kSchemaVersion},
          {"study_id", st.id},
          {"partial", complete < st.pairs.size()},
          {"coverage", coverage},
          {"decisions", decisions},
          {"win_rates", metrics::sheet_win_rates(sheet_decisions).to_json()}};
}

std::string EvalStore::export_jsonl(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto& st = find_study(id);
  std::ostringstream out;
  for (const auto& a : st.assignments) {
    for (std::size_t k = 0; k < a.order.size(); ++k) {
      const auto& p = st.pairs[a.order[k]];
      const auto it = responses_.find({a.token, p.id});
      if (it == responses_.end()) continue;
      const auto& r = it->second;
      const std::string& left = a.a_on_left[k] ? p.system_a : p.system_b;
      const std::string& right = a.a_on_left[k] ? p.system_b : p.system_a;
      nlohmann::json chosen = nullptr;
      if (r.choice == Choice::kLeft) chosen = left;
      if (r.choice == Choice::kRight) chosen = right;
      out << nlohmann::json{{"version", kSchemaVersion},
                            {"study_id", st.id},
                            {"sheet", "sheet-" + std::to_string(a.sheet + 1)},
                            {"token", a.token},
                            {"pair_id", p.id},
                            {"item", st.items[p.item].id},
                            {"left_system", left},
                            {"right_system", right},
                            {"choice", to_string(r.choice)},
                            {"chosen_system", chosen},
                            {"revision", r.revision},
                            {"received_at", r.received_at}}
                 .dump()
          << "\n";
    }
  }
  return out.str();
}

}  // namespace h2ke::evalserve
