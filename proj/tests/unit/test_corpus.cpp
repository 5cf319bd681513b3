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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "h2ke/corpus.hpp"
#include "h2ke/error.hpp"
#include "test_support.hpp"

using namespace h2ke;
using namespace h2ke::corpus;

namespace {

const LanguageRegistry& reg() { return LanguageRegistry::builtin(); }

ParallelExample ex(std::string id, std::string src, std::string tgt, const std::string& s,
                   const std::string& t) {
  return {std::move(id), std::move(src), std::move(tgt), reg().get(s), reg().get(t)};
}

std::vector<TaggedExample> tagged_group(const std::string& s, const std::string& t,
                                        std::size_t n) {
  std::vector<TaggedExample> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({ex(s + t + std::to_string(i), "x", "y", s, t)});
  }
  return out;
}

std::string write_file(const testing::TempDir& dir, const std::string& name,
                       const std::string& body) {
  const auto p = dir / name;
  std::ofstream(p, std::ios::binary) << body;
  return p.string();
}

}  // namespace

TEST_CASE("registry holds the four built-in roles and accepts extensions") {
  LanguageRegistry r;
  CHECK(r.get("cKo").token_form == "<cKo>");
  CHECK(r.contains("Hanja"));
  CHECK_FALSE(r.contains("Ja"));
  CHECK(r.add("Ja").token_form == "<Ja>");
  CHECK(r.contains("Ja"));
  CHECK_THROWS_AS(r.get("Zz"), InvalidArgument);
}

TEST_CASE("jsonl loading keeps file order and assigns stem:line ids") {
  testing::TempDir dir("corpus");
  const auto path = write_file(
      dir, "annals.jsonl",
      "{\"src\":\"改淸州牧\",\"tgt\":\"청주목을 고쳤다\",\"src_lang\":\"Hanja\",\"tgt_lang\":\"cKo\"}\n"
      "{\"id\":\"k2\",\"src\":\"王曰\",\"tgt\":\"왕이 말하였다\",\"src_lang\":\"Hanja\",\"tgt_lang\":\"oKo\"}\n"
      "\n"
      "{\"src\":\"王曰\",\"tgt\":\"The king said\",\"src_lang\":\"Hanja\",\"tgt_lang\":\"En\"}\n");
  const auto rows = load_corpus(path, CorpusFormat::kJsonl);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].id == "annals:1");
  CHECK(rows[1].id == "k2");
  CHECK(rows[2].id == "annals:4");
  CHECK(rows[0].source_text == "改淸州牧");
  CHECK(rows[2].target_lang.code == "En");
  CHECK(format_from_path(path) == CorpusFormat::kJsonl);
}

TEST_CASE("malformed records name the offending line") {
  const std::string good =
      "{\"src\":\"a\",\"tgt\":\"b\",\"src_lang\":\"Hanja\",\"tgt_lang\":\"cKo\"}\n";
  auto message_of = [](auto&& fn) {
    try {
      fn();
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  const auto empty_target = message_of([&] {
    parse_jsonl(good + "{\"src\":\"a\",\"tgt\":\"  \",\"src_lang\":\"Hanja\",\"tgt_lang\":\"cKo\"}\n",
                "f", reg());
  });
  CHECK(empty_target.find("f:2") != std::string::npos);
  const auto unknown = message_of([&] {
    parse_jsonl("{\"src\":\"a\",\"tgt\":\"b\",\"src_lang\":\"Xx\",\"tgt_lang\":\"cKo\"}\n", "f",
                reg());
  });
  CHECK(unknown.find("'Xx'") != std::string::npos);
  CHECK(message_of([&] { parse_jsonl("{not json\n", "f", reg()); }).find("f:1") !=
        std::string::npos);
  CHECK(message_of([&] {
          parse_jsonl("{\"src\":\"a\",\"tgt\":\"b\",\"src_lang\":\"cKo\",\"tgt_lang\":\"cKo\"}\n",
                      "f", reg());
        }).find("f:1") != std::string::npos);
}

TEST_CASE("tsv fields unescape tabs, newlines and backslashes; quotes are literal") {
  // Hand-built fixture: the second source field holds a real tab, the target a
  // newline and a backslash, and a quoted field keeps its quotes verbatim.
  const std::string body =
      "Hanja\tcKo\t王曰\t왕이 말하였다\n"
      "Hanja\tcKo\t\"左\\t右\"\t첫 줄\\n둘째 줄 \\\\ 끝\n";
  const auto rows = parse_tsv(body, "t", reg());
  REQUIRE(rows.size() == 2);
  CHECK(rows[1].source_text == "\"左\t右\"");
  CHECK(rows[1].target_text == "첫 줄\n둘째 줄 \\ 끝");
  CHECK(rows[1].id == "t:2");
  CHECK(tsv_unescape(tsv_escape("a\tb\nc\\d"), 1) == "a\tb\nc\\d");
  CHECK_THROWS_AS(parse_tsv("Hanja\tcKo\tonly three\n", "t", reg()), ParseError);
  CHECK_THROWS_AS(parse_tsv("Hanja\tcKo\tbad \\q escape\tx\n", "t", reg()), ParseError);
}

TEST_CASE("tag prefixing leaves targets untouched and filters disallowed pairs") {
  const auto full = build_training_pairs({ex("1", "改淸州牧", "청주목", "Hanja", "cKo")},
                                         PairSpec::full());
  REQUIRE(full.examples.size() == 1);
  CHECK(full.examples[0].example.source_text == "<cKo> 改淸州牧");
  CHECK(full.examples[0].example.target_text == "청주목");

  std::vector<ParallelExample> only_oko_en;
  for (int i = 0; i < 7; ++i) only_oko_en.push_back(ex(std::to_string(i), "s", "t", "oKo", "En"));
  const auto spec = PairSpec::parse("Hanja-oKo,Hanja-cKo,Hanja-En,oKo-cKo", reg());
  const auto filtered = build_training_pairs(only_oko_en, spec);
  CHECK(filtered.examples.empty());
  CHECK(filtered.filtered == 7);

  std::vector<ParallelExample> mixed = {
      ex("a", "s1", "t1", "Hanja", "oKo"), ex("b", "s2", "t2", "Hanja", "cKo"),
      ex("c", "s3", "t3", "Hanja", "En"),  ex("d", "s4", "t4", "oKo", "cKo"),
      ex("e", "s5", "t5", "oKo", "En")};
  const auto all = build_training_pairs(mixed, PairSpec::full());
  REQUIRE(all.examples.size() == mixed.size());
  CHECK(all.filtered == 0);
  for (std::size_t i = 0; i < mixed.size(); ++i) {
    CHECK(all.examples[i].example.id == mixed[i].id);
    CHECK(all.examples[i].example.target_text == mixed[i].target_text);
  }
  CHECK_THROWS_AS(PairSpec::parse("Hanja", reg()), ParseError);
  CHECK_THROWS_AS(PairSpec::parse("", reg()), ParseError);
}

TEST_CASE("split sizes use floor allocation with the remainder in train") {
  std::vector<ParallelExample> rows;
  for (int i = 0; i < 10; ++i) rows.push_back(ex(std::to_string(i), "s", "t", "Hanja", "cKo"));
  const auto s = split(rows, {0.8, 0.1, 0.1}, 7);
  CHECK(s.train.size() == 8);
  CHECK(s.valid.size() == 1);
  CHECK(s.test.size() == 1);
  const auto again = split(rows, {0.8, 0.1, 0.1}, 7);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);

  std::set<std::string> all(s.train.begin(), s.train.end());
  all.insert(s.valid.begin(), s.valid.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 10);

  const auto degenerate = split(rows, {1, 0, 0}, 1);
  CHECK(degenerate.train.size() == 10);
  const auto odd = split(std::vector<ParallelExample>(rows.begin(), rows.begin() + 7),
                         {0.5, 0.25, 0.25}, 1);
  CHECK(odd.valid.size() == 1);  // floor(1.75)
  CHECK(odd.test.size() == 1);
  CHECK(odd.train.size() == 5);
  CHECK_THROWS_AS(split(rows, {0.8, 0.1, 0.2}, 7), InvalidArgument);
  CHECK_THROWS_AS(split({}, {1, 0, 0}, 7), InvalidArgument);
}

TEST_CASE("epoch shuffles are deterministic permutations") {
  CHECK(shuffle_epoch(std::vector<int>{42}, 3, 0) == std::vector<int>{42});
  Rng rng(5);
  std::vector<std::uint64_t> items(1000);
  for (auto& x : items) x = rng.next() % 50;  // duplicates on purpose
  const auto a = shuffle_epoch(items, 1, 0);
  CHECK(a == shuffle_epoch(items, 1, 0));
  CHECK(a != shuffle_epoch(items, 1, 1));
  auto sa = a, si = items;
  std::sort(sa.begin(), sa.end());
  std::sort(si.begin(), si.end());
  CHECK(sa == si);
}

TEST_CASE("rebalance probabilities follow p^(1/T) and flatten the distribution") {
  // {100, 10} at T=2: sqrt(10/11) and sqrt(1/11), normalized.
  const auto q = rebalance_probabilities({100, 10}, 2.0);
  const double a = std::sqrt(100.0 / 110.0), b = std::sqrt(10.0 / 110.0);
  CHECK(q[0] == doctest::Approx(a / (a + b)).epsilon(1e-12));
  CHECK(q[0] == doctest::Approx(0.7597).epsilon(1e-4));
  CHECK(q[1] == doctest::Approx(0.2403).epsilon(1e-3));

  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::size_t> sizes(2 + rng.index(5));
    for (auto& s : sizes) s = 1 + rng.index(1000);
    const double total = std::accumulate(sizes.begin(), sizes.end(), 0.0);
    const double t = 1.0 + rng.uniform() * 10.0;
    const auto qs = rebalance_probabilities(sizes, t);
    double pmax = 0, pmin = 1;
    for (auto s : sizes) {
      pmax = std::max(pmax, s / total);
      pmin = std::min(pmin, s / total);
    }
    CHECK(*std::max_element(qs.begin(), qs.end()) <= pmax + 1e-12);
    CHECK(*std::min_element(qs.begin(), qs.end()) >= pmin - 1e-12);
    CHECK(std::accumulate(qs.begin(), qs.end(), 0.0) == doctest::Approx(1.0));
  }
}

TEST_CASE("rebalance sampling matches its target proportions") {
  std::map<PairType, std::vector<TaggedExample>> groups;
  groups[{"Hanja", "oKo"}] = tagged_group("Hanja", "oKo", 600);
  groups[{"Hanja", "cKo"}] = tagged_group("Hanja", "cKo", 300);
  groups[{"Hanja", "En"}] = tagged_group("Hanja", "En", 100);
  const std::size_t n = 100000;

  auto counts = [&](double t) {
    std::map<PairType, double> c;
    for (const auto& e : rebalance(groups, t, n, 11)) c[e.pair_type()] += 1;
    return c;
  };
  // Chi-square goodness of fit, 2 degrees of freedom, critical value at
  // p = 0.001 is 13.816.
  const auto c1 = counts(1.0);
  const std::map<PairType, double> p1 = {
      {{"Hanja", "oKo"}, 0.6}, {{"Hanja", "cKo"}, 0.3}, {{"Hanja", "En"}, 0.1}};
  double chi2 = 0;
  for (const auto& [k, p] : p1) {
    const double expect = p * n;
    chi2 += (c1.at(k) - expect) * (c1.at(k) - expect) / expect;
  }
  CHECK(chi2 < 13.816);

  for (const auto& [k, c] : counts(1e9)) CHECK(std::abs(c / n - 1.0 / 3) < 0.01);

  const auto small = rebalance(groups, 1.0, 60, 3);
  CHECK(small.size() == 60);
  // Downsampling draws without replacement.
  std::map<std::string, int> seen;
  for (const auto& e : small) seen[e.example.id]++;
  for (const auto& [id, k] : seen) CHECK(k == 1);
  CHECK(rebalance(groups, 1.0, 60, 3).size() == 60);
  CHECK_THROWS_AS(rebalance({}, 1.0, 10, 1), InvalidArgument);
  CHECK_THROWS_AS(rebalance(groups, 0.5, 10, 1), InvalidArgument);
}

TEST_CASE("corpus stats count and normalize per pair type") {
  CHECK(corpus_stats({}).rows.empty());
  const auto st = corpus_stats({ex("1", "a", "b", "Hanja", "oKo"), ex("2", "a", "b", "Hanja", "oKo"),
                                ex("3", "a", "b", "Hanja", "oKo"), ex("4", "a", "b", "oKo", "En")});
  REQUIRE(st.rows.size() == 2);
  CHECK(st.total == 4);
  double sum = 0;
  for (const auto& r : st.rows) {
    sum += r.ratio;
    if (r.pair == PairType{"Hanja", "oKo"}) CHECK(r.ratio == doctest::Approx(0.75));
    if (r.pair == PairType{"oKo", "En"}) CHECK(r.ratio == doctest::Approx(0.25));
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  const auto table = st.to_table();
  CHECK(table.find("75.0%") != std::string::npos);
  CHECK(table.find("25.0%") != std::string::npos);

  std::vector<ParallelExample> big(359726, ex("x", "a", "b", "Hanja", "oKo"));
  const auto paper_like = corpus_stats(big).to_table();
  CHECK(paper_like.find("359,726") != std::string::npos);
  CHECK(paper_like.find("100.0%") != std::string::npos);
}
