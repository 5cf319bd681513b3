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
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "h2ke/corpus.hpp"

namespace h2ke::subword {

// U+2581 LOWER ONE EIGHTH BLOCK, substituted for ' ' before segmentation.
inline constexpr std::string_view kSpaceMarker = "\xE2\x96\x81";

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kNumCoreSpecials = 4;

struct TokenizerConfig {
  int vocab_size = 32000;  // includes special tokens
  int max_piece_len = 16;  // code points
  int seed_size = 100000;
  double shrink_factor = 0.75;
  int max_em_iters = 64;  // pruning rounds before a final cut to size
  int em_sub_iters = 2;
  std::vector<std::string> tags = {"Hanja", "oKo", "cKo", "En"};

  void validate() const;
};

struct SegmentPiece {
  std::string text;  // surface text (after space-marker substitution)
  int id = kUnkId;

  friend bool operator==(const SegmentPiece&, const SegmentPiece&) = default;
};

// A trained unigram vocabulary. Ids: PAD, UNK, BOS, EOS, one id per language
// tag, then ordinary pieces.
class SubwordModel {
 public:
  SubwordModel(std::vector<std::pair<std::string, double>> pieces,
               std::vector<std::string> tag_codes);

  static SubwordModel from_json(std::string_view json);
  static SubwordModel load(const std::filesystem::path& path);
  std::string to_json() const;
  void save(const std::filesystem::path& path) const;
  // SHA-256 of to_json(); checkpoints record it.
  std::string hash() const;

  int size() const { return static_cast<int>(pieces_.size()); }
  int num_specials() const { return kNumCoreSpecials + static_cast<int>(tags_.size()); }
  bool is_special(int id) const { return id >= 0 && id < num_specials(); }
  bool is_tag(int id) const { return id >= kNumCoreSpecials && id < num_specials(); }
  int tag_id(std::string_view code) const;
  const std::vector<std::string>& tag_codes() const { return tags_; }

  const std::string& piece(int id) const;
  double log_prob(int id) const;
  std::optional<int> find(std::string_view piece) const;

  // Highest-scoring segmentation of `text` after space-marker substitution.
  // Uncovered characters come back as single UNK pieces.
  std::vector<SegmentPiece> viterbi_segment(std::string_view text) const;
  double score(const std::vector<SegmentPiece>& segmentation) const;

  // A registered tag token at position 0 ("<cKo> ...") is emitted as its
  // special id; tags elsewhere are ordinary text.
  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  // Log-probability used for UNK nodes in the lattice.
  double unk_log_prob() const { return unk_log_prob_; }

 private:
  std::vector<std::pair<std::string, double>> pieces_;
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> index_;
  int max_piece_chars_ = 1;
  double unk_log_prob_ = -100.0;
};

struct TrainingTrace {
  // Corpus log-likelihood before each M-step, one vector per pruning round.
  std::vector<std::vector<double>> em_log_likelihood;
};

SubwordModel train_subword(const std::vector<std::string>& sentences,
                           const TokenizerConfig& config,
                           TrainingTrace* trace = nullptr);

// Replaces ' ' with the space marker.
std::string mark_spaces(std::string_view text);

}  // namespace h2ke::subword
