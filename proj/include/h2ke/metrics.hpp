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

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2ke/adapter.hpp"
#include "h2ke/error.hpp"

namespace h2ke::metrics {

using Tokens = std::vector<std::string>;

// ---------------------------------------------------------------- BLEU

enum class BleuSmoothing { kNone, kExpDecay };

struct BleuReport {
  double score = 0.0;                 // 0..100
  std::vector<double> precisions;     // percentages, after smoothing
  std::vector<std::size_t> matches;   // clipped n-gram matches
  std::vector<std::size_t> totals;    // hypothesis n-grams
  double brevity_penalty = 1.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
  BleuSmoothing smoothing = BleuSmoothing::kExpDecay;

  nlohmann::json to_json() const;
};

// Corpus BLEU with one reference per hypothesis.
BleuReport corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                       int max_n = 4, BleuSmoothing smoothing = BleuSmoothing::kExpDecay);

// Several references per hypothesis; clipping uses the per-n-gram maximum
// over references and the brevity penalty the closest reference length
// (the shorter one on ties).
BleuReport corpus_bleu_multi(const std::vector<Tokens>& hypotheses,
                             const std::vector<std::vector<Tokens>>& references, int max_n = 4,
                             BleuSmoothing smoothing = BleuSmoothing::kExpDecay);

BleuSmoothing parse_smoothing(std::string_view name);
std::string to_string(BleuSmoothing s);

// ---------------------------------------------------------------- pretokenization

enum class PretokScheme { kWhitespace, kChar, kAdapter };

PretokScheme parse_pretok_scheme(std::string_view name);

// Whitespace: split on Unicode whitespace. Char: one token per non-space
// code point.
Tokens pretokenize(std::string_view text, PretokScheme scheme);

// Adapter-backed tokenizer: sends {"text"} and expects {"tokens": [..]}.
class AdapterPretokenizer {
 public:
  explicit AdapterPretokenizer(const std::string& command,
                               std::chrono::milliseconds timeout = std::chrono::seconds(10));
  Tokens operator()(std::string_view text);

 private:
  LineAdapter adapter_;
};

// ---------------------------------------------------------------- pairwise ppl comparison

enum class Outcome { kAWins, kBWins, kTie };

std::string to_string(Outcome o);
Outcome parse_outcome(std::string_view s);

struct ComparisonOutcome {
  std::string item;
  std::string system_a;
  std::string system_b;
  Outcome result = Outcome::kTie;

  nlohmann::json to_json() const;
  static ComparisonOutcome from_json(const nlohmann::json& j);
};

struct SystemScores {
  std::string system;
  std::map<std::string, double> ppl;  // item id -> perplexity
};

// One outcome per unordered system pair and item, pairs in input order
// (i < j), items in id order. Lower perplexity wins; exact equality ties.
std::vector<ComparisonOutcome> compare_ppl(const std::vector<SystemScores>& systems);

// ---------------------------------------------------------------- Bradley-Terry

struct BtPair {
  std::string a;
  std::string b;
  std::size_t wins_a = 0;
  std::size_t wins_b = 0;
  std::size_t ties = 0;
  double probability = 0.5;  // P(a better than b); 0.5 for a pair with no decisive outcome
  double p_value = 1.0;      // two-sided exact sign test on the decisive outcomes
  bool significant = false;  // p < 0.05
};

struct BtFit {
  std::vector<std::string> systems;           // first-appearance order
  std::vector<double> strengths;              // sum to 1
  std::vector<std::vector<double>> prob;      // prob[i][j] = s_i / (s_i + s_j)
  std::vector<BtPair> pairs;                  // every pair that appears in the outcomes
  std::vector<double> log_likelihood;         // after each MM sweep
  int sweeps = 0;
  bool converged = false;

  double probability(const std::string& a, const std::string& b) const;
  nlohmann::json to_json() const;
};

struct BtOptions {
  double tolerance = 1e-10;
  int max_sweeps = 10000;
};

// Maximum-likelihood strengths by minorization-maximization; ties are left
// out of the likelihood and reported per pair.
BtFit fit_bt(const std::vector<ComparisonOutcome>& outcomes, const BtOptions& options = {});

// Two-sided exact binomial test of k successes in n trials against p = 1/2.
double sign_test_p_value(std::size_t k, std::size_t n);

// ---------------------------------------------------------------- win rates

struct WinRate {
  std::string a;
  std::string b;
  std::size_t n = 0;
  double win = 0.0;  // percentages from a's side
  double tie = 0.0;
  double loss = 0.0;

  nlohmann::json to_json() const;
};

// Frequency table oriented as (a, b).
WinRate winning_rate(const std::vector<ComparisonOutcome>& outcomes, const std::string& a,
                     const std::string& b);
// Every unordered pair present, oriented as first seen.
std::vector<WinRate> winning_rates(const std::vector<ComparisonOutcome>& outcomes);

std::string format_win_table(const std::vector<WinRate>& rows);

// ---------------------------------------------------------------- human votes

enum class Vote { kA, kB, kNoDifference };

std::string to_string(Vote v);
Vote parse_vote(std::string_view s);

// Strict majority of three; a three-way split is "no difference".
Vote majority_vote(const std::vector<Vote>& responses);

// The same rule for any non-empty number of responses: a choice held by more
// than half of them wins, anything else is "no difference".
Vote strict_majority(const std::vector<Vote>& responses);

struct SheetDecision {
  std::string sheet;
  std::string system_a;
  std::string system_b;
  Vote decision = Vote::kNoDifference;
};

struct SheetRate {
  std::string sheet;
  std::size_t n = 0;
  double win = 0.0;  // fractions from the pairing's first system
  double tie = 0.0;
  double loss = 0.0;
};

struct PairingReport {
  std::string a;
  std::string b;
  std::vector<SheetRate> sheets;  // sheet id order
  double mean_win = 0.0, mean_tie = 0.0, mean_loss = 0.0;
  double std_win = 0.0, std_tie = 0.0, std_loss = 0.0;  // population std over sheets
};

struct WinRateReport {
  std::vector<PairingReport> pairings;

  nlohmann::json to_json() const;
};

// Pairings are oriented as first seen; decisions recorded the other way
// round are flipped.
WinRateReport sheet_win_rates(const std::vector<SheetDecision>& decisions);

// ---------------------------------------------------------------- transliteration

// Hangul run immediately followed by a parenthesized run of Han characters,
// e.g. "도장(導掌)". Returned in order of appearance, duplicates kept.
std::vector<std::string> extract_annotations(std::string_view text);

struct TranslitItem {
  std::size_t index = 0;
  std::size_t old_annotations = 0;
  std::vector<std::string> archaic;   // in old, absent from the reference
  std::vector<std::string> replaced;  // archaic and absent from the candidate
};

struct TranslitReport {
  std::vector<std::string> archaic_set;  // sorted, unique
  std::vector<TranslitItem> items;       // items that carry annotations
  std::size_t archaic_occurrences = 0;
  std::size_t replaced_occurrences = 0;
  double replacement_rate = 0.0;
  bool no_archaic_set = false;

  nlohmann::json to_json() const;
};

// The archaic set is built from (old, reference) and the replacement rate is
// measured on `candidate`; without a candidate the reference itself is
// measured.
TranslitReport transliteration_stats(const std::vector<std::string>& old_translations,
                                     const std::vector<std::string>& reference,
                                     const std::vector<std::string>* candidate = nullptr);

}  // namespace h2ke::metrics
