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

#include "h2ke/metrics.hpp"
#include "h2ke/rng.hpp"
#include "oracles.hpp"

using namespace h2ke;
using namespace h2ke::metrics;

namespace {

Tokens toks(const std::string& s) { return pretokenize(s, PretokScheme::kWhitespace); }

std::vector<ComparisonOutcome> repeated(const std::string& a, const std::string& b,
                                        std::size_t a_wins, std::size_t b_wins,
                                        std::size_t ties = 0) {
  std::vector<ComparisonOutcome> out;
  std::size_t id = 0;
  auto add = [&](Outcome r, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out.push_back({std::to_string(id++), a, b, r});
  };
  add(Outcome::kAWins, a_wins);
  add(Outcome::kBWins, b_wins);
  add(Outcome::kTie, ties);
  return out;
}

std::vector<ComparisonOutcome> concat(std::vector<ComparisonOutcome> a,
                                      const std::vector<ComparisonOutcome>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("BLEU: fixed examples") {
  const std::vector<Tokens> h = {toks("the cat sat on the mat"), toks("a b c d e f")};
  CHECK(corpus_bleu(h, h).score == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(corpus_bleu({toks("x y z")}, {toks("a b c")}, 4, BleuSmoothing::kNone).score == 0.0);

  const auto r = corpus_bleu({toks("a b c d")}, {toks("a b c d e")}, 4, BleuSmoothing::kNone);
  CHECK(r.precisions == std::vector<double>{100.0, 100.0, 100.0, 100.0});
  CHECK(r.brevity_penalty == doctest::Approx(std::exp(1.0 - 5.0 / 4.0)).epsilon(1e-15));
  CHECK(r.score == doctest::Approx(77.88007830714049).epsilon(1e-12));
  CHECK(r.hyp_length == 4);
  CHECK(r.ref_length == 5);
}

TEST_CASE("BLEU: exp-decay smoothing") {
  // Precisions 4/5, 2/4, 1/3 and 0/2; the zero becomes 1/(2*2).
  const auto r = corpus_bleu({toks("a b c d e")}, {toks("a b c x e")});
  CHECK(r.matches == std::vector<std::size_t>{4, 2, 1, 0});
  CHECK(r.precisions[3] == doctest::Approx(25.0).epsilon(1e-15));
  const double expect = 100.0 * std::pow(0.8 * 0.5 * (1.0 / 3.0) * 0.25, 0.25);
  CHECK(r.score == doctest::Approx(expect).epsilon(1e-12));
  // Two zero precisions: floors 1/2 and then 1/4 of a match.
  const auto r2 = corpus_bleu({toks("a b x c d")}, {toks("a b y c d")});
  CHECK(r2.matches == std::vector<std::size_t>{4, 2, 0, 0});
  CHECK(r2.precisions[2] == doctest::Approx(100.0 / (2 * 3)).epsilon(1e-15));
  CHECK(r2.precisions[3] == doctest::Approx(100.0 / (4 * 2)).epsilon(1e-15));
  CHECK(corpus_bleu({toks("a b c d e")}, {toks("a b c x e")}, 4, BleuSmoothing::kNone).score == 0.0);
}

TEST_CASE("BLEU: matches the brute-force oracle on random corpora") {
  Rng rng(77);
  const std::vector<std::string> vocab = {"a", "b", "c", "d", "e"};
  int nonzero = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto v = 2 + rng.index(4);
    const auto n_sent = 1 + rng.index(4);
    std::vector<Tokens> hyp, ref;
    for (std::size_t s = 0; s < n_sent; ++s) {
      Tokens h, r;
      for (std::size_t i = 0, n = 1 + rng.index(8); i < n; ++i) r.push_back(vocab[rng.index(v)]);
      if (rng.index(2) == 0) {
        // A noisy copy of the reference, so that higher-order matches occur.
        h = r;
        for (auto& t : h) {
          if (rng.index(5) == 0) t = vocab[rng.index(v)];
        }
        if (rng.index(3) == 0) h.pop_back();
      } else {
        for (std::size_t i = 0, n = 1 + rng.index(8); i < n; ++i) h.push_back(vocab[rng.index(v)]);
      }
      hyp.push_back(h);
      ref.push_back(r);
    }
    const auto got = corpus_bleu(hyp, ref, 4, BleuSmoothing::kNone);
    const auto want = oracle::bleu_no_smoothing(hyp, ref);
    CHECK(std::abs(got.score - want.score) < 1e-9);
    CHECK(std::abs(got.brevity_penalty - want.bp) < 1e-12);
    nonzero += got.score > 0;

    // Sentence order does not matter.
    std::vector<std::size_t> perm(n_sent);
    for (std::size_t i = 0; i < n_sent; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<Tokens> hp, rp;
    for (auto i : perm) {
      hp.push_back(hyp[i]);
      rp.push_back(ref[i]);
    }
    CHECK(corpus_bleu(hp, rp).score == corpus_bleu(hyp, ref).score);
  }
  MESSAGE(nonzero << " of 200 random corpora have non-zero BLEU");
  CHECK(nonzero > 50);
}

TEST_CASE("BLEU: multiple references and errors") {
  const auto r = corpus_bleu_multi({toks("a b c")}, {{toks("a b c d e f"), toks("a b"),
                                                      toks("a b c d")}});
  CHECK(r.ref_length == 2);  // |3-2| = |3-4|; the shorter wins
  CHECK_THROWS_AS(corpus_bleu({toks("a")}, {}), InvalidArgument);
  CHECK_THROWS_AS(corpus_bleu({}, {}), InvalidArgument);
  CHECK(corpus_bleu({Tokens{}}, {toks("a")}).score == 0.0);
  CHECK(parse_smoothing("none") == BleuSmoothing::kNone);
  CHECK_THROWS_AS(parse_smoothing("floor"), InvalidArgument);
}

TEST_CASE("pre-tokenization schemes") {
  CHECK(pretokenize("a b", PretokScheme::kWhitespace) == Tokens{"a", "b"});
  CHECK(pretokenize("  a\t b\xE3\x80\x80" "c ", PretokScheme::kWhitespace) ==
        Tokens{"a", "b", "c"});
  CHECK(pretokenize("改淸", PretokScheme::kChar) == Tokens{"改", "淸"});
  CHECK(pretokenize("改 淸州", PretokScheme::kChar) == Tokens{"改", "淸", "州"});
  CHECK(pretokenize("", PretokScheme::kChar).empty());
  CHECK_THROWS_AS(pretokenize("x", PretokScheme::kAdapter), InvalidArgument);
  CHECK(parse_pretok_scheme("external-adapter") == PretokScheme::kAdapter);
}

TEST_CASE("compare_ppl") {
  const auto one = compare_ppl({{"A", {{"1", 2.0}}}, {"B", {{"1", 3.0}}}});
  REQUIRE(one.size() == 1);
  CHECK(one[0].result == Outcome::kAWins);
  CHECK(compare_ppl({{"A", {{"1", 4.0}}}, {"B", {{"1", 4.0}}}})[0].result == Outcome::kTie);
  CHECK(compare_ppl({{"A", {{"1", 4.0}}}, {"B", {{"1", 3.5}}}})[0].result == Outcome::kBWins);

  const auto six = compare_ppl({{"x", {{"i1", 1.0}, {"i2", 2.0}}},
                                {"y", {{"i1", 1.5}, {"i2", 1.0}}},
                                {"z", {{"i1", 1.0}, {"i2", 9.0}}}});
  CHECK(six.size() == 6);
  try {
    compare_ppl({{"x", {{"i1", 1.0}, {"i2", 2.0}}}, {"y", {{"i1", 1.5}}}});
    FAIL("expected an error");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("'i2'") != std::string::npos);
    CHECK(std::string(e.what()).find("'y'") != std::string::npos);
  }
  const auto j = six[0].to_json();
  CHECK(ComparisonOutcome::from_json(j).result == six[0].result);
  CHECK(j["result"] == "A_wins");
}

TEST_CASE("sign test matches the summed-pmf oracle") {
  for (int n = 0; n <= 60; ++n) {
    for (int k = 0; k <= n; ++k) {
      CHECK(sign_test_p_value(k, n) == doctest::Approx(oracle::binomial_two_sided(k, n)).epsilon(1e-9));
    }
  }
  CHECK(sign_test_p_value(72, 100) == doctest::Approx(1.2579e-5).epsilon(1e-3));
}

TEST_CASE("Bradley-Terry: two systems reduce to the win fraction") {
  const auto fit = fit_bt(repeated("H2KE", "gt-oKo", 72, 28, 5));
  CHECK(fit.probability("H2KE", "gt-oKo") == doctest::Approx(0.72).epsilon(1e-12));
  CHECK(fit.probability("gt-oKo", "H2KE") == doctest::Approx(0.28).epsilon(1e-12));
  REQUIRE(fit.pairs.size() == 1);
  CHECK(fit.pairs[0].ties == 5);
  CHECK(fit.pairs[0].p_value == doctest::Approx(oracle::binomial_two_sided(72, 100)).epsilon(1e-9));
  CHECK(fit.pairs[0].significant);
  CHECK(fit.converged);
  CHECK(fit.strengths[0] + fit.strengths[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("Bradley-Terry: balanced round robin") {
  auto o = concat(repeated("A", "B", 10, 10), repeated("B", "C", 10, 10));
  o = concat(o, repeated("C", "A", 10, 10));
  const auto fit = fit_bt(o);
  for (double s : fit.strengths) CHECK(s == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  for (const auto& p : fit.pairs) {
    CHECK(p.probability == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_FALSE(p.significant);
  }
}

TEST_CASE("Bradley-Terry: planted strengths are recovered and the likelihood rises") {
  const std::vector<std::string> names = {"s0", "s1", "s2"};
  const std::vector<double> strength = {0.5, 0.3, 0.2};
  Rng rng(2024);
  std::vector<ComparisonOutcome> o;
  for (int t = 0; t < 10000; ++t) {
    const auto pair = rng.index(3);
    const std::size_t i = pair == 2 ? 1 : 0, j = pair == 0 ? 1 : 2;
    const bool a_wins = rng.uniform() < strength[i] / (strength[i] + strength[j]);
    o.push_back({std::to_string(t), names[i], names[j], a_wins ? Outcome::kAWins : Outcome::kBWins});
  }
  const auto fit = fit_bt(o);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      if (i == j) continue;
      const double want = strength[i] / (strength[i] + strength[j]);
      CHECK(std::abs(fit.probability(names[i], names[j]) - want) < 0.02);
      CHECK(fit.prob[i][j] + fit.prob[j][i] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
  for (std::size_t s = 1; s < fit.log_likelihood.size(); ++s) {
    CHECK(fit.log_likelihood[s] >= fit.log_likelihood[s - 1] - 1e-9);
  }
  double sum = 0.0;
  for (double s : fit.strengths) sum += s;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("Bradley-Terry: errors and all-ties pairs") {
  auto o = concat(repeated("A", "B", 3, 2), repeated("C", "D", 4, 1));
  try {
    fit_bt(o);
    FAIL("expected disconnected-graph error");
  } catch (const InvalidArgument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("A, B") != std::string::npos);
    CHECK(msg.find("C, D") != std::string::npos);
  }
  CHECK_THROWS_AS(fit_bt(repeated("A", "B", 3, 0)), InvalidArgument);

  auto tied = concat(repeated("A", "C", 6, 4), repeated("B", "C", 5, 5));
  tied = concat(tied, repeated("A", "B", 0, 0, 7));
  const auto fit = fit_bt(tied);
  const auto it = std::find_if(fit.pairs.begin(), fit.pairs.end(),
                               [](const BtPair& p) { return p.a == "A" && p.b == "B"; });
  REQUIRE(it != fit.pairs.end());
  CHECK(it->probability == 0.5);
  CHECK(it->wins_a + it->wins_b == 0);
  CHECK(it->ties == 7);
  CHECK(it->p_value == 1.0);
}

TEST_CASE("winning rates") {
  auto o = repeated("H2KE", "gt-oKo", 6852, 1756, 1392);
  const auto r = winning_rate(o, "H2KE", "gt-oKo");
  CHECK(r.win == doctest::Approx(68.52));
  CHECK(r.tie == doctest::Approx(13.92));
  CHECK(r.loss == doctest::Approx(17.56));
  const auto rev = winning_rate(o, "gt-oKo", "H2KE");
  CHECK(rev.win == r.loss);
  CHECK(rev.loss == r.win);
  const auto table = format_win_table(winning_rates(o));
  CHECK(table.find("68.52") != std::string::npos);
  CHECK(table.find("13.92") != std::string::npos);

  const auto ties = winning_rate(repeated("a", "b", 0, 0, 9), "a", "b");
  CHECK(ties.win == 0.0);
  CHECK(ties.tie == 100.0);
  CHECK(ties.loss == 0.0);
}

TEST_CASE("majority vote") {
  using V = Vote;
  CHECK(majority_vote({V::kA, V::kA, V::kB}) == V::kA);
  CHECK(majority_vote({V::kA, V::kB, V::kNoDifference}) == V::kNoDifference);
  CHECK(majority_vote({V::kNoDifference, V::kNoDifference, V::kA}) == V::kNoDifference);
  CHECK_THROWS_AS(majority_vote({V::kA, V::kA}), InvalidArgument);
  auto swap = [](V v) { return v == V::kA ? V::kB : v == V::kB ? V::kA : v; };
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      for (int c = 0; c < 3; ++c) {
        const std::vector<V> r = {V(a), V(b), V(c)};
        CHECK(majority_vote({swap(r[0]), swap(r[1]), swap(r[2])}) == swap(majority_vote(r)));
        std::vector<V> p = {r[2], r[0], r[1]};
        CHECK(majority_vote(p) == majority_vote(r));
      }
    }
  }
}

TEST_CASE("sheet win rates") {
  using V = Vote;
  const auto one = sheet_win_rates({{"s1", "A", "B", V::kA},
                                    {"s1", "A", "B", V::kA},
                                    {"s1", "A", "B", V::kNoDifference},
                                    {"s1", "B", "A", V::kA}});
  REQUIRE(one.pairings.size() == 1);
  const auto& s = one.pairings[0].sheets.at(0);
  CHECK(s.win == 0.5);
  CHECK(s.tie == 0.25);
  CHECK(s.loss == 0.25);

  std::vector<SheetDecision> two;
  for (const std::string sheet : {"s1", "s2"}) {
    for (int i = 0; i < 10; ++i) {
      const bool win = sheet == "s1" ? i < 4 : i < 6;
      two.push_back({sheet, "gt-cKo", "gt-oKo", win ? V::kA : V::kB});
    }
  }
  const auto rep = sheet_win_rates(two);
  CHECK(rep.pairings[0].mean_win == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rep.pairings[0].std_win == doctest::Approx(0.1).epsilon(1e-12));

  std::vector<SheetDecision> same;
  for (const std::string sheet : {"x", "y"}) {
    same.push_back({sheet, "p", "q", V::kA});
    same.push_back({sheet, "p", "q", V::kB});
  }
  CHECK(sheet_win_rates(same).pairings[0].std_win == 0.0);
}

TEST_CASE("transliteration analysis") {
  CHECK(extract_annotations("도장(導掌)과 극적(劇賊)이") ==
        std::vector<std::string>{"도장(導掌)", "극적(劇賊)"});
  CHECK(extract_annotations("abc(導掌) 도장 (導掌) 도장(ab)").empty());

  const std::vector<std::string> old = {"극적(劇賊)이 태어났다"};
  const std::vector<std::string> neu = {"극악한 역적이 태어났다"};
  const auto r = transliteration_stats(old, neu);
  CHECK(r.archaic_set == std::vector<std::string>{"극적(劇賊)"});
  CHECK(r.replacement_rate == 1.0);

  // Measured on a candidate that kept the old wording.
  const auto kept = transliteration_stats(old, neu, &old);
  CHECK(kept.replacement_rate == 0.0);
  CHECK_FALSE(kept.no_archaic_set);

  const auto none = transliteration_stats({"평범한 문장"}, {"평범한 문장"});
  CHECK(none.no_archaic_set);

  const auto proper = transliteration_stats({"도장(導掌)이 극적(劇賊)을 잡았다"},
                                            {"도장(導掌)이 도적을 잡았다"});
  CHECK(proper.archaic_set == std::vector<std::string>{"극적(劇賊)"});
  CHECK_THROWS_AS(transliteration_stats({"a"}, {}), InvalidArgument);
}

TEST_CASE("adapter pre-tokenizer matches the char scheme") {
  AdapterPretokenizer tok(std::string(H2KE_FAKE_ADAPTER) + " --mode pretok");
  for (const std::string s : {"改淸州牧", "극적(劇賊)이 태어났다", "a b  c"}) {
    CHECK(tok(s) == pretokenize(s, PretokScheme::kChar));
  }
  AdapterPretokenizer wrong(std::string(H2KE_FAKE_ADAPTER) + " --mode unit");
  CHECK_THROWS_AS(wrong("x"), AdapterError);
}
