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

#include "h2ke/lm.hpp"

#include <cmath>
#include <numeric>

#include "h2ke/checkpoint.hpp"
#include "h2ke/rng.hpp"
#include "h2ke/utf8.hpp"

namespace h2ke::lm {

double ppl_from_score(const LmScore& s) {
  if (s.tokens < 1) throw InvalidArgument("perplexity needs a token count >= 1");
  if (!std::isfinite(s.nll) || s.nll < 0.0) {
    throw InvalidArgument("perplexity needs a finite non-negative NLL");
  }
  return std::exp(s.nll / static_cast<double>(s.tokens));
}

double sentence_ppl(LmScorer& scorer, const std::string& text) {
  if (text.empty()) throw InvalidArgument("sentence_ppl: empty text");
  return ppl_from_score(scorer.score(text));
}

std::vector<ScoredText> score_all(LmScorer& scorer, const std::vector<std::string>& texts) {
  std::vector<ScoredText> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    try {
      const auto s = scorer.score(texts[i]);
      out[i].ppl = ppl_from_score(s);
      out[i].score = s;
    } catch (const Error& e) {
      out[i].error = e.what();
    }
  }
  return out;
}

UniformScorer::UniformScorer(int vocab_size) : vocab_size_(vocab_size) {
  if (vocab_size < 1) throw InvalidArgument("uniform scorer needs vocab_size >= 1");
}

LmScore UniformScorer::score(const std::string& text) {
  if (text.empty()) throw InvalidArgument("uniform scorer: empty text");
  const auto n = utf8::decode(text).size();
  return {static_cast<double>(n) * std::log(static_cast<double>(vocab_size_)), n};
}

InternalLm::InternalLm(model::ModelParams<float> params, subword::SubwordModel spm)
    : params_(std::move(params)), spm_(std::move(spm)) {
  if (!params_.config.decoder_only) throw InvalidArgument("internal LM must be decoder-only");
  if (params_.config.vocab_size != spm_.size()) {
    throw InvalidArgument("internal LM vocabulary does not match its tokenizer");
  }
}

LmScore InternalLm::score(const std::string& text) {
  if (text.empty()) throw InvalidArgument("internal LM: empty text");
  const auto ids = spm_.encode(text);
  if (static_cast<int>(ids.size()) + 1 > params_.config.max_seq_len) {
    throw InvalidArgument("internal LM: sentence of " + std::to_string(ids.size()) +
                          " tokens exceeds max_seq_len " +
                          std::to_string(params_.config.max_seq_len));
  }
  const auto batch = model::Batch::make({}, {ids}, "lm");
  const auto r = model::evaluate_loss(params_, batch);
  return {std::max(0.0, r.nll_sum), r.tokens};
}

void InternalLm::save(const std::filesystem::path& checkpoint) const {
  model::save_checkpoint(checkpoint, params_, spm_.hash(), {{"kind", "internal_lm"}});
}

InternalLm InternalLm::load(const std::filesystem::path& checkpoint,
                            const subword::SubwordModel& spm) {
  return InternalLm(model::load_checkpoint<float>(checkpoint, spm.hash()), spm);
}

InternalLm train_lm(const std::vector<std::string>& sentences, const subword::SubwordModel& spm,
                    LmTrainConfig config) {
  std::vector<training::TrainExample> all;
  for (const auto& s : sentences) {
    if (s.empty()) continue;
    all.push_back({{}, spm.encode(s)});
  }
  if (all.empty()) throw InvalidArgument("train_lm: empty corpus");
  if (config.valid_fraction < 0.0 || config.valid_fraction >= 1.0) {
    throw InvalidArgument("train_lm: valid_fraction must lie in [0, 1)");
  }
  config.model.decoder_only = true;
  config.model.n_layers_enc = 0;
  config.model.vocab_size = spm.size();
  config.trainer.subword_hash = spm.hash();

  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.trainer.seed, 0x4c4d));
  rng.shuffle(order);
  const auto n_valid =
      static_cast<std::size_t>(std::floor(config.valid_fraction * static_cast<double>(all.size())));
  std::vector<training::TrainExample> train_set, valid_set;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_valid ? valid_set : train_set).push_back(all[order[i]]);
  }
  if (valid_set.empty()) valid_set = train_set;

  auto params = model::init_params<float>(config.model, config.trainer.seed);
  auto result = training::train(train_set, valid_set, std::move(params), config.trainer);
  return InternalLm(std::move(result.params), spm);
}

ExternalScorer::ExternalScorer(const std::string& command, std::chrono::milliseconds timeout)
    : adapter_(command, timeout) {}

LmScore ExternalScorer::score(const std::string& text) {
  if (text.empty()) throw InvalidArgument("external scorer: empty text");
  const auto reply = adapter_.request({{"text", text}});
  const auto nll = reply.find("nll");
  const auto tokens = reply.find("tokens");
  if (nll == reply.end() || !nll->is_number() || tokens == reply.end() ||
      !tokens->is_number_integer()) {
    throw AdapterError("adapter protocol violation: expected {nll, tokens}, got " + reply.dump());
  }
  const double v = nll->get<double>();
  const auto n = tokens->get<long long>();
  if (!std::isfinite(v) || v < 0.0 || n < 1) {
    throw AdapterError("adapter protocol violation: out-of-range score " + reply.dump());
  }
  return {v, static_cast<std::size_t>(n)};
}

std::unique_ptr<LmScorer> external_scorer(const std::string& command,
                                          std::chrono::milliseconds timeout) {
  return std::make_unique<ExternalScorer>(command, timeout);
}

}  // namespace h2ke::lm
