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

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "h2ke/adapter.hpp"
#include "h2ke/model.hpp"
#include "h2ke/subword.hpp"
#include "h2ke/training.hpp"

namespace h2ke::lm {

struct LmScore {
  double nll = 0.0;        // total negative log-likelihood, nats
  std::size_t tokens = 0;  // the scorer's own token count
};

class LmScorer {
 public:
  virtual ~LmScorer() = default;
  virtual LmScore score(const std::string& text) = 0;
  virtual std::string name() const = 0;
};

// exp(nll / tokens). Empty text and invalid scores are errors.
double ppl_from_score(const LmScore& s);
double sentence_ppl(LmScorer& scorer, const std::string& text);

struct ScoredText {
  std::optional<LmScore> score;
  double ppl = 0.0;
  std::string error;  // set when score is empty
};

// Scores each text independently; a failing sentence records its error and
// the rest of the batch carries on.
std::vector<ScoredText> score_all(LmScorer& scorer, const std::vector<std::string>& texts);

// Every code point is one token with probability 1/V.
class UniformScorer final : public LmScorer {
 public:
  explicit UniformScorer(int vocab_size);
  LmScore score(const std::string& text) override;
  std::string name() const override { return "uniform"; }

 private:
  int vocab_size_;
};

// Decoder-only transformer over a subword vocabulary. The token count is
// the number of subword ids plus the closing EOS.
class InternalLm final : public LmScorer {
 public:
  InternalLm(model::ModelParams<float> params, subword::SubwordModel spm);

  LmScore score(const std::string& text) override;
  std::string name() const override { return "internal"; }

  const model::ModelParams<float>& params() const { return params_; }
  const subword::SubwordModel& tokenizer() const { return spm_; }

  void save(const std::filesystem::path& checkpoint) const;
  static InternalLm load(const std::filesystem::path& checkpoint,
                         const subword::SubwordModel& spm);

 private:
  model::ModelParams<float> params_;
  subword::SubwordModel spm_;
};

struct LmTrainConfig {
  model::TransformerConfig model;  // decoder_only and vocab_size are set by train_lm
  training::TrainerConfig trainer;
  // Share of sentences held out for validation; when that rounds to zero the
  // training sentences are validated on.
  double valid_fraction = 0.1;
};

InternalLm train_lm(const std::vector<std::string>& sentences, const subword::SubwordModel& spm,
                    LmTrainConfig config);

// Talks to an adapter process: sends {"text": ...} per line and expects
// {"nll": number, "tokens": integer}.
class ExternalScorer final : public LmScorer {
 public:
  explicit ExternalScorer(const std::string& command,
                          std::chrono::milliseconds timeout = std::chrono::seconds(10));
  LmScore score(const std::string& text) override;
  std::string name() const override { return "external:" + adapter_.command(); }

 private:
  LineAdapter adapter_;
};

std::unique_ptr<LmScorer> external_scorer(const std::string& command,
                                          std::chrono::milliseconds timeout =
                                              std::chrono::seconds(10));

}  // namespace h2ke::lm
