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

#include <httplib.h>

#include <fstream>
#include <set>
#include <thread>

#include "h2ke/evalserve.hpp"
#include "test_support.hpp"

using namespace h2ke;
using namespace h2ke::evalserve;
using nlohmann::json;

namespace {

const std::vector<std::string> kLabels = {"SYSTEM_OLD", "SYSTEM_NEW", "SYSTEM_MT"};

json triplet_payload(int n, std::uint64_t seed = 7, int per_sheet = 50) {
  json items = json::array();
  for (int i = 0; i < n; ++i) {
    json c;
    for (const auto& l : kLabels) c[l] = "text " + std::to_string(i) + " from candidate " + l.substr(7);
    items.push_back({{"id", "item" + std::to_string(i)}, {"candidates", c}});
  }
  return {{"version", 1},
          {"systems", kLabels},
          {"items", items},
          {"config", {{"pairs_per_sheet", per_sheet}, {"evaluators_per_pair", 3}}},
          {"seed", seed}};
}

int counter_tokens = 0;
std::string counting_token() { return "tok" + std::to_string(++counter_tokens); }

// The text shown on one side of a pair tells which system produced it.
std::string system_of(const std::string& text) {
  for (const auto& l : kLabels) {
    if (text.find("candidate " + l.substr(7)) != std::string::npos) return l;
  }
  return "";
}

void check_blind(const json& payload) {
  const auto s = payload.dump();
  for (const auto& l : kLabels) CHECK(s.find(l) == std::string::npos);
  CHECK_FALSE(payload.contains("system_a"));
}

// Answers every pair of `token`'s sheet by preferring `favourite` when shown.
void answer_all(EvalStore& store, const std::string& token, const std::string& favourite) {
  for (;;) {
    const auto next = store.next_pair(token);
    if (next["status"] == "done") break;
    std::string choice = "no_difference";
    if (system_of(next["left"]) == favourite) choice = "left";
    if (system_of(next["right"]) == favourite) choice = "right";
    store.submit({{"token", token}, {"pair_id", next["pair_id"]}, {"choice", choice}});
  }
}

std::vector<std::string> tokens_of(const json& info) {
  std::vector<std::string> out;
  for (const auto& s : info["sheets"]) {
    for (const auto& t : s["evaluators"]) out.push_back(t);
  }
  return out;
}

}  // namespace

TEST_CASE("study construction: counts") {
  const auto st = build_study(triplet_payload(150), "s", counting_token);
  CHECK(st.pairs.size() == 450);
  CHECK(st.sheets.size() == 9);
  CHECK(st.assignments.size() == 27);

  // 150 triplets plus 150 two-system items give 600 pairs on 12 sheets.
  auto p = triplet_payload(150);
  for (int i = 0; i < 150; ++i) {
    p["items"].push_back({{"id", "pair" + std::to_string(i)},
                          {"candidates", {{"SYSTEM_OLD", "o"}, {"SYSTEM_NEW", "n"}}}});
  }
  const auto big = build_study(p, "s", counting_token);
  CHECK(big.pairs.size() == 600);
  CHECK(big.sheets.size() == 12);
  for (const auto& s : big.sheets) CHECK(s.size() == 50);

  const json one = {{"items", {{{"id", 1}, {"candidates", {{"x", "a"}, {"y", "b"}}}}}}};
  const auto single = build_study(one, "s", counting_token);
  CHECK(single.pairs.size() == 1);
  CHECK(single.assignments.size() == 3);
  CHECK(single.systems == std::vector<std::string>{"x", "y"});

  const auto short_sheet = build_study(triplet_payload(20, 1, 50), "s", counting_token);
  CHECK(short_sheet.sheets.size() == 2);
  CHECK(short_sheet.sheets[1].size() == 10);
}

TEST_CASE("study construction: validation") {
  json bad = {{"items",
               {{{"candidates", {{"x", "a"}, {"y", "b"}}}},
                {{"candidates", {{"x", "a"}, {"z", "b"}}}}}}};
  try {
    build_study(bad, "s", counting_token);
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("inconsistent system sets") != std::string::npos);
  }
  bad = triplet_payload(2);
  bad["items"][0]["candidates"]["OTHER"] = "x";
  CHECK_THROWS_AS(build_study(bad, "s", counting_token), InvalidArgument);
  CHECK_THROWS_AS(build_study(json{{"items", json::array()}}, "s", counting_token), ParseError);
  auto v2 = triplet_payload(1);
  v2["version"] = 2;
  CHECK_THROWS_AS(build_study(v2, "s", counting_token), ParseError);
  auto dup = triplet_payload(2);
  dup["items"][1]["id"] = "item0";
  CHECK_THROWS_AS(build_study(dup, "s", counting_token), ParseError);
}

TEST_CASE("study construction: determinism and schedule validity") {
  const auto a = build_study(triplet_payload(40, 99, 25), "s", counting_token);
  const auto b = build_study(triplet_payload(40, 99, 25), "s", counting_token);
  const auto c = build_study(triplet_payload(40, 100, 25), "s", counting_token);
  CHECK(a.sheets == b.sheets);
  bool same_sides = true, same_orders = true;
  for (std::size_t i = 0; i < a.assignments.size(); ++i) {
    same_orders &= a.assignments[i].order == b.assignments[i].order;
    same_sides &= a.assignments[i].a_on_left == b.assignments[i].a_on_left;
  }
  CHECK(same_orders);
  CHECK(same_sides);
  CHECK(a.sheets != c.sheets);

  std::vector<int> slots(a.pairs.size(), 0);
  std::size_t left = 0, total = 0;
  for (const auto& asg : a.assignments) {
    std::set<std::size_t> seen(asg.order.begin(), asg.order.end());
    CHECK(seen.size() == asg.order.size());
    for (auto p : asg.order) {
      ++slots[p];
      CHECK(a.pairs[p].sheet == asg.sheet);
    }
    for (bool l : asg.a_on_left) left += l, ++total;
  }
  for (int s : slots) CHECK(s == 3);
  CHECK(left > total / 4);
  CHECK(left < 3 * total / 4);
}

TEST_CASE("evaluator flow: next, submit, revisions, done") {
  testing::TempDir dir("evalflow");
  EvalStore store(dir.path());
  const auto info = store.create_study(triplet_payload(4, 3, 50));
  CHECK(info["pairs"] == 12);
  const auto tokens = tokens_of(info);
  REQUIRE(tokens.size() == 3);
  const auto& t = tokens[0];

  const auto first = store.next_pair(t);
  CHECK(first["status"] == "pair");
  CHECK(first["progress"]["position"] == 1);
  CHECK(first["progress"]["answered"] == 0);
  CHECK(store.next_pair(t) == first);
  check_blind(first);

  const auto ack = store.submit({{"token", t}, {"pair_id", first["pair_id"]}, {"choice", "left"}});
  check_blind(ack);
  CHECK(ack["revision"] == 1);
  const auto second = store.next_pair(t);
  CHECK(second["pair_id"] != first["pair_id"]);
  CHECK(second["progress"]["answered"] == 1);

  const auto again = store.submit({{"token", t}, {"pair_id", first["pair_id"]}, {"choice", "right"}});
  CHECK(again["revision"] == 2);
  const auto exported = store.export_jsonl(info["study_id"]);
  CHECK(exported.find("\"choice\":\"right\"") != std::string::npos);
  CHECK(exported.find("\"revision\":2") != std::string::npos);

  CHECK_THROWS_AS(store.submit({{"token", t}, {"pair_id", first["pair_id"]}, {"choice", "up"}}),
                  ParseError);
  CHECK_THROWS_AS(store.submit({{"token", t}, {"pair_id", "p999"}, {"choice", "left"}}), Conflict);
  CHECK_THROWS_AS(store.next_pair("nobody"), NotFound);
  CHECK_THROWS_AS(store.results("study-9", true), NotFound);

  answer_all(store, t, "SYSTEM_NEW");
  const auto done = store.next_pair(t);
  CHECK(done["status"] == "done");
  CHECK(done["progress"]["answered"] == 12);
  check_blind(done);
}

TEST_CASE("left/right choices map back to hidden systems") {
  testing::TempDir dir("evalblind");
  EvalStore store(dir.path());
  const auto info = store.create_study(triplet_payload(2, 11));
  const auto t = tokens_of(info)[1];
  const auto next = store.next_pair(t);
  const auto left_system = system_of(next["left"]);
  store.submit({{"token", t}, {"pair_id", next["pair_id"]}, {"choice", "left"}});
  const auto row = json::parse(store.export_jsonl(info["study_id"]));
  CHECK(row["chosen_system"] == left_system);
  CHECK(row["left_system"] == left_system);
  CHECK(row["pair_id"] == next["pair_id"]);
}

TEST_CASE("results: unanimous preference and incomplete studies") {
  testing::TempDir dir("evalres");
  EvalStore store(dir.path());
  const auto info = store.create_study(triplet_payload(30, 5, 30));
  const std::string id = info["study_id"];
  const auto tokens = tokens_of(info);
  CHECK_THROWS_AS(store.results(id, false), Conflict);
  answer_all(store, tokens[0], "SYSTEM_MT");
  const auto partial = store.results(id, true);
  CHECK(partial["partial"] == true);
  CHECK(partial["coverage"]["complete_pairs"] == 0);
  CHECK(partial["coverage"]["responses"] == 30);

  for (const auto& t : tokens) answer_all(store, t, "SYSTEM_MT");
  const auto r = store.results(id, false);
  CHECK(r["partial"] == false);
  CHECK(r["decisions"].size() == 90);
  for (const auto& p : r["win_rates"]["pairings"]) {
    const bool mt_first = p["a"] == "SYSTEM_MT";
    const bool involves_mt = mt_first || p["b"] == "SYSTEM_MT";
    if (!involves_mt) {
      CHECK(p["mean"]["tie"] == 1.0);
      continue;
    }
    CHECK(p["mean"][mt_first ? "win" : "loss"] == 1.0);
    CHECK(p["std"]["win"] == 0.0);
  }
}

TEST_CASE("results: scripted three-evaluator run over four pairs") {
  testing::TempDir dir("evalscript");
  EvalStore store(dir.path());
  json items = json::array();
  for (int i = 0; i < 4; ++i) {
    items.push_back({{"id", i},
                     {"candidates", {{"SYSTEM_OLD", "old " + std::to_string(i) + " candidate OLD"},
                                     {"SYSTEM_NEW", "new " + std::to_string(i) + " candidate NEW"}}}});
  }
  const auto info = store.create_study(
      {{"systems", {"SYSTEM_NEW", "SYSTEM_OLD"}}, {"items", items}, {"seed", 4}});
  const auto tokens = tokens_of(info);
  REQUIRE(tokens.size() == 3);
  // Votes per item (by evaluator): N = new, O = old, D = no difference.
  //   item 0: N N O -> new      item 1: N O D -> ND
  //   item 2: D D N -> ND       item 3: O O N -> old
  const std::vector<std::string> plan = {"NNDO", "NODO", "ODNN"};
  for (std::size_t e = 0; e < 3; ++e) {
    for (;;) {
      const auto next = store.next_pair(tokens[e]);
      if (next["status"] == "done") break;
      const std::string left = next["left"];
      const int item = left[4] - '0';
      const char v = plan[e][item];
      std::string choice = "no_difference";
      if (v != 'D') {
        const std::string want = v == 'N' ? "SYSTEM_NEW" : "SYSTEM_OLD";
        choice = system_of(left) == want ? "left" : "right";
      }
      store.submit({{"token", tokens[e]}, {"pair_id", next["pair_id"]}, {"choice", choice}});
    }
  }
  const auto r = store.results(info["study_id"], false);
  std::map<std::string, std::string> decided;
  for (const auto& d : r["decisions"]) {
    CHECK(d["system_a"] == "SYSTEM_NEW");
    decided[d["item"]] = d["decision"];
  }
  CHECK(decided["0"] == "A");
  CHECK(decided["1"] == "ND");
  CHECK(decided["2"] == "ND");
  CHECK(decided["3"] == "B");
  const auto& p = r["win_rates"]["pairings"][0];
  CHECK(p["mean"]["win"] == 0.25);
  CHECK(p["mean"]["tie"] == 0.5);
  CHECK(p["mean"]["loss"] == 0.25);
}

TEST_CASE("persistence: acknowledged responses survive restarts and crashes") {
  testing::TempDir dir("evalpersist");
  testing::TempDir crash("evalcrash");
  std::string id;
  std::vector<std::string> tokens;
  json before;
  {
    EvalStore store(dir.path(), 5);
    const auto info = store.create_study(triplet_payload(6, 8, 10));
    id = info["study_id"];
    tokens = tokens_of(info);
    answer_all(store, tokens[0], "SYSTEM_OLD");
    answer_all(store, tokens[1], "SYSTEM_NEW");
    before = store.results(id, true);
    // Copy the files while the store is live: this is what a crash leaves.
    for (const auto& f : std::filesystem::directory_iterator(dir.path())) {
      std::filesystem::copy(f.path(), crash.path() / f.path().filename());
    }
  }
  {
    EvalStore reopened(dir.path());
    CHECK(reopened.results(id, true) == before);
    CHECK(reopened.next_pair(tokens[0])["status"] == "done");
  }
  {
    // A torn final record is dropped; everything acknowledged is intact.
    std::ofstream(crash / "evalserve.log.jsonl", std::ios::app) << "{\"type\":\"resp";
    EvalStore recovered(crash.path());
    CHECK(recovered.results(id, true) == before);
    for (std::size_t e = 2; e < tokens.size(); ++e) answer_all(recovered, tokens[e], "SYSTEM_OLD");
    CHECK(recovered.results(id, false)["partial"] == false);
  }
  EvalStore again(crash.path());
  CHECK(again.results(id, false)["coverage"]["responses"] == 54);
}

TEST_CASE("HTTP endpoints") {
  testing::TempDir dir("evalhttp");
  testing::TempDir web("evalweb");
  std::ofstream(web / "index.html") << "<html>survey</html>";
  auto store = std::make_unique<EvalStore>(dir.path());
  auto server = std::make_unique<EvalServer>(*store, web.path());
  const int port = server->bind("127.0.0.1", 0);
  std::thread th([&] { server->serve(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_read_timeout(5, 0);

  auto created = cli.Post("/studies", triplet_payload(3, 2).dump(), "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto info = json::parse(created->body);
  const std::string id = info["study_id"];
  const auto tokens = tokens_of(info);

  CHECK(cli.Get("/studies/" + id)->status == 200);
  CHECK(cli.Get("/studies/nope")->status == 404);
  CHECK(cli.Get("/next")->status == 400);
  CHECK(cli.Get("/next?token=zzz")->status == 404);
  CHECK(cli.Post("/studies", "{not json", "application/json")->status == 400);
  CHECK(cli.Get("/studies/" + id + "/results")->status == 409);
  const auto page = cli.Get("/index.html");
  REQUIRE(page);
  CHECK(page->body.find("survey") != std::string::npos);

  for (const auto& t : tokens) {
    for (;;) {
      auto next = cli.Get("/next?token=" + t);
      REQUIRE(next);
      REQUIRE(next->status == 200);
      const auto n = json::parse(next->body);
      check_blind(n);
      if (n["status"] == "done") break;
      const auto choice = system_of(n["left"]) == "SYSTEM_NEW" ? "left" : "right";
      auto ack = cli.Post("/responses",
                          json{{"token", t}, {"pair_id", n["pair_id"]}, {"choice", choice}}.dump(),
                          "application/json");
      REQUIRE(ack);
      CHECK(ack->status == 200);
      check_blind(json::parse(ack->body));
    }
  }
  CHECK(cli.Post("/responses", json{{"token", tokens[0]}, {"pair_id", "p1"}, {"choice", "x"}}.dump(),
                 "application/json")
            ->status == 400);
  const auto results = cli.Get("/studies/" + id + "/results");
  REQUIRE(results->status == 200);
  const auto export_before = cli.Get("/studies/" + id + "/export")->body;
  CHECK(std::count(export_before.begin(), export_before.end(), '\n') == 27);

  server->stop();
  th.join();
  server.reset();
  store.reset();

  // Restart on the same directory.
  store = std::make_unique<EvalStore>(dir.path());
  server = std::make_unique<EvalServer>(*store);
  const int port2 = server->bind("127.0.0.1", 0);
  std::thread th2([&] { server->serve(); });
  httplib::Client cli2("127.0.0.1", port2);
  const auto after = cli2.Get("/studies/" + id + "/results");
  REQUIRE(after);
  CHECK(json::parse(after->body) == json::parse(results->body));
  CHECK(cli2.Get("/studies/" + id + "/export")->body == export_before);
  server->stop();
  th2.join();
}
