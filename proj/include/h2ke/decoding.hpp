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

#include <string>
#include <vector>

#include "h2ke/model.hpp"
#include "h2ke/subword.hpp"

namespace h2ke::decoding {

enum class LengthNorm { kNone, kMean };

struct BeamConfig {
  int beam_size = 5;
  int max_len = 128;  // generated tokens, EOS included
  // When len_a > 0 the limit per sentence becomes
  // min(max_len, floor(len_a * source_length) + len_b).
  double len_a = 0.0;
  int len_b = 0;
  LengthNorm norm = LengthNorm::kMean;
  int n_best = 1;
  // Ids that mark a target language; a source must start with one of them
  // and they are never generated. Defaults to the four built-in tags.
  std::vector<int> tag_ids = {4, 5, 6, 7};

  void validate(int model_max_seq_len) const;
  int limit_for(std::size_t source_length) const;
};

struct Hypothesis {
  std::vector<int> tokens;  // BOS first; ends with EOS when finished
  double log_prob = 0.0;    // sum of the chosen per-step log-probabilities
  double score = 0.0;       // log_prob normalized per BeamConfig::norm
  bool finished = false;

  // Generated steps, EOS included.
  std::size_t steps() const { return tokens.empty() ? 0 : tokens.size() - 1; }
  // The translation ids: BOS and EOS removed.
  std::vector<int> output() const;
};

double normalized(double log_prob, std::size_t steps, LengthNorm norm);

// Source of next-token distributions for a decoder. Every call passes
// prefixes of one common length, each starting with BOS.
class StepScorer {
 public:
  virtual ~StepScorer() = default;
  virtual int vocab_size() const = 0;
  virtual std::vector<std::vector<double>> next(const std::vector<std::vector<int>>& prefixes) = 0;
};

template <typename T>
class ModelStepScorer final : public StepScorer {
 public:
  ModelStepScorer(const model::ModelParams<T>& params, const std::vector<int>& source);
  int vocab_size() const override { return params_.config.vocab_size; }
  std::vector<std::vector<double>> next(const std::vector<std::vector<int>>& prefixes) override;

 private:
  const model::ModelParams<T>& params_;
  model::EncodedSource<T> encoded_;
};

// Beam search with a finished pool. Stops once no live hypothesis can reach
// the best finished normalized score; the bound used for mean normalization
// is cum / limit, which is the best any continuation of a live hypothesis can
// achieve. Results are sorted by normalized score, ties by the token
// sequence (lexicographically smaller first).
std::vector<Hypothesis> beam_search(StepScorer& scorer, const BeamConfig& config,
                                    int limit);

// Argmax continuation each step; ties go to the lowest id.
Hypothesis greedy(StepScorer& scorer, const BeamConfig& config, int limit);

// `source` must start with a tag id from config.tag_ids.
template <typename T>
std::vector<Hypothesis> beam_search(const model::ModelParams<T>& params,
                                    const std::vector<int>& source, const BeamConfig& config);

template <typename T>
Hypothesis greedy(const model::ModelParams<T>& params, const std::vector<int>& source,
                  const BeamConfig& config);

// Re-scores a token sequence (BOS first) with the full forward pass.
template <typename T>
double sequence_log_prob(const model::ModelParams<T>& params, const std::vector<int>& source,
                         const std::vector<int>& tokens);

// Tag the source, encode, search and decode the best hypothesis. Empty input
// yields empty output.
template <typename T>
std::string translate(const model::ModelParams<T>& params, const subword::SubwordModel& spm,
                      const std::string& text, const std::string& target_lang,
                      BeamConfig config);

template <typename T>
std::vector<std::string> translate_lines(const model::ModelParams<T>& params,
                                         const subword::SubwordModel& spm,
                                         const std::vector<std::string>& lines,
                                         const std::string& target_lang,
                                         const BeamConfig& config);

}  // namespace h2ke::decoding
