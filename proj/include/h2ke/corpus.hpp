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
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace h2ke::corpus {

// A language role. The built-in codes are Hanja, oKo, cKo and En; further
// codes may be registered at runtime.
struct LanguageTag {
  std::string code;
  std::string token_form;  // "<code>"

  friend bool operator==(const LanguageTag&, const LanguageTag&) = default;
  friend auto operator<=>(const LanguageTag& a, const LanguageTag& b) {
    return a.code <=> b.code;
  }
};

class LanguageRegistry {
 public:
  // Starts with the four built-in languages.
  LanguageRegistry();

  const LanguageTag& add(const std::string& code);
  const LanguageTag& get(const std::string& code) const;
  bool contains(const std::string& code) const;
  const std::vector<LanguageTag>& tags() const { return tags_; }

  static const LanguageRegistry& builtin();

 private:
  std::vector<LanguageTag> tags_;
};

struct ParallelExample {
  std::string id;
  std::string source_text;
  std::string target_text;
  LanguageTag source_lang;
  LanguageTag target_lang;
};

using PairType = std::pair<std::string, std::string>;  // (source code, target code)

struct PairSpec {
  std::vector<PairType> allowed;

  bool allows(const PairType& p) const;
  // The five pair types of the Hanja/Korean/English setup.
  static PairSpec full();
  // Parses "Hanja-cKo,oKo-En".
  static PairSpec parse(const std::string& text, const LanguageRegistry& reg);
};

enum class CorpusFormat { kJsonl, kTsv };

CorpusFormat format_from_path(const std::filesystem::path& path);

std::vector<ParallelExample> load_corpus(
    const std::filesystem::path& path, CorpusFormat format,
    const LanguageRegistry& registry = LanguageRegistry::builtin());

std::vector<ParallelExample> parse_jsonl(const std::string& content,
                                         const std::string& stem,
                                         const LanguageRegistry& registry);
std::vector<ParallelExample> parse_tsv(const std::string& content,
                                       const std::string& stem,
                                       const LanguageRegistry& registry);

// TSV field escaping: tab, newline and backslash as \t, \n and \\.
std::string tsv_escape(const std::string& field);
std::string tsv_unescape(const std::string& field, std::size_t line_no);

struct TaggedExample {
  ParallelExample example;  // source_text already carries the tag prefix
  PairType pair_type() const {
    return {example.source_lang.code, example.target_lang.code};
  }
};

struct TaggedCorpus {
  std::vector<TaggedExample> examples;
  std::size_t filtered = 0;
};

// Prefixes each source with "<tgt> " and drops pair types outside `spec`.
TaggedCorpus build_training_pairs(const std::vector<ParallelExample>& examples,
                                  const PairSpec& spec);

struct SplitRatios {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> valid;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
};

DatasetSplit split(const std::vector<ParallelExample>& examples,
                   SplitRatios ratios, std::uint64_t seed);

// Deterministic permutation of indices [0, n) for (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed,
                                           std::uint64_t epoch);

template <typename T>
std::vector<T> shuffle_epoch(const std::vector<T>& items, std::uint64_t seed,
                             std::uint64_t epoch) {
  std::vector<T> out;
  out.reserve(items.size());
  for (std::size_t i : epoch_permutation(items.size(), seed, epoch)) {
    out.push_back(items[i]);
  }
  return out;
}

// q_i proportional to p_i^(1/T), p_i = size_i / total.
std::vector<double> rebalance_probabilities(const std::vector<std::size_t>& sizes,
                                            double temperature);

std::vector<TaggedExample> rebalance(
    const std::map<PairType, std::vector<TaggedExample>>& groups,
    double temperature, std::size_t epoch_size, std::uint64_t seed);

std::map<PairType, std::vector<TaggedExample>> group_by_pair(
    const std::vector<TaggedExample>& examples);

struct CorpusStats {
  struct Row {
    PairType pair;
    std::size_t count = 0;
    double ratio = 0.0;
  };
  std::vector<Row> rows;
  std::size_t total = 0;

  // Aligned text table: pair, sentence count with thousands separators, %.
  std::string to_table() const;
};

CorpusStats corpus_stats(const std::vector<ParallelExample>& examples);

}  // namespace h2ke::corpus
