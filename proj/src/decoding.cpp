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

#include "h2ke/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace h2ke::decoding {

namespace {

constexpr int kPad = subword::kPadId;
constexpr int kBos = subword::kBosId;
constexpr int kEos = subword::kEosId;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.tokens < b.tokens;
}

std::vector<bool> banned_mask(const BeamConfig& config, int vocab) {
  std::vector<bool> banned(vocab, false);
  auto ban = [&](int id) {
    if (id >= 0 && id < vocab) banned[id] = true;
  };
  ban(kPad);
  ban(kBos);
  for (int t : config.tag_ids) ban(t);
  return banned;
}

void check_source(const std::vector<int>& source, const BeamConfig& config) {
  if (source.empty() ||
      std::find(config.tag_ids.begin(), config.tag_ids.end(), source.front()) ==
          config.tag_ids.end()) {
    throw InvalidArgument("decoding: source must start with a target-language tag id");
  }
}

}  // namespace

void BeamConfig::validate(int model_max_seq_len) const {
  if (beam_size < 1) throw InvalidArgument("beam_size must be >= 1");
  if (n_best < 1 || n_best > beam_size) throw InvalidArgument("n_best must lie in [1, beam_size]");
  if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
  if (max_len > model_max_seq_len) {
    throw InvalidArgument("max_len " + std::to_string(max_len) + " exceeds the model's max_seq_len " +
                          std::to_string(model_max_seq_len));
  }
}

int BeamConfig::limit_for(std::size_t source_length) const {
  if (len_a <= 0.0) return max_len;
  const double l = std::floor(len_a * static_cast<double>(source_length)) + len_b;
  return std::clamp(static_cast<int>(l), 1, max_len);
}

std::vector<int> Hypothesis::output() const {
  std::vector<int> out;
  for (int t : tokens) {
    if (t != kBos && t != kEos) out.push_back(t);
  }
  return out;
}

double normalized(double log_prob, std::size_t steps, LengthNorm norm) {
  if (norm == LengthNorm::kNone) return log_prob;
  return log_prob / static_cast<double>(std::max<std::size_t>(1, steps));
}

template <typename T>
ModelStepScorer<T>::ModelStepScorer(const model::ModelParams<T>& params,
                                    const std::vector<int>& source)
    : params_(params), encoded_(model::encode_source(params, source)) {}

template <typename T>
std::vector<std::vector<double>> ModelStepScorer<T>::next(
    const std::vector<std::vector<int>>& prefixes) {
  const auto lp = model::next_token_logprobs(params_, encoded_, prefixes);
  std::vector<std::vector<double>> out(lp.rows, std::vector<double>(lp.cols));
  for (std::size_t r = 0; r < lp.rows; ++r) {
    for (std::size_t v = 0; v < lp.cols; ++v) out[r][v] = static_cast<double>(lp(r, v));
  }
  return out;
}

std::vector<Hypothesis> beam_search(StepScorer& scorer, const BeamConfig& config, int limit) {
  if (config.beam_size < 1) throw InvalidArgument("beam_size must be >= 1");
  const int vocab = scorer.vocab_size();
  const auto banned = banned_mask(config, vocab);
  const auto k = static_cast<std::size_t>(config.beam_size);

  std::vector<Hypothesis> live = {Hypothesis{{kBos}, 0.0, 0.0, false}};
  std::vector<Hypothesis> pool;
  for (int step = 1; step <= limit && !live.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    for (const auto& h : live) prefixes.push_back(h.tokens);
    const auto dist = scorer.next(prefixes);

    std::vector<Hypothesis> cand;
    std::vector<int> ids(vocab);
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto& lp = dist[h];
      ids.clear();
      for (int v = 0; v < vocab; ++v) {
        if (!banned[v] && lp[v] != kNegInf) ids.push_back(v);
      }
      const std::size_t take = std::min(k, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + take, ids.end(), [&](int a, int b) {
        return lp[a] != lp[b] ? lp[a] > lp[b] : a < b;
      });
      for (std::size_t j = 0; j < take; ++j) {
        Hypothesis n = live[h];
        n.tokens.push_back(ids[j]);
        n.log_prob += lp[ids[j]];
        n.finished = ids[j] == kEos;
        n.score = normalized(n.log_prob, n.steps(), config.norm);
        cand.push_back(std::move(n));
      }
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Hypothesis& a, const Hypothesis& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      return a.tokens < b.tokens;
    });
    if (cand.size() > k) cand.resize(k);
    live.clear();
    for (auto& c : cand) (c.finished ? pool : live).push_back(std::move(c));

    if (!pool.empty() && !live.empty()) {
      double best_finished = kNegInf;
      for (const auto& p : pool) best_finished = std::max(best_finished, p.score);
      double best_live = kNegInf;
      for (const auto& h : live) best_live = std::max(best_live, h.log_prob);
      const double bound = config.norm == LengthNorm::kMean
                               ? best_live / static_cast<double>(std::max(1, limit))
                               : best_live;
      if (bound < best_finished) break;
    }
  }
  std::vector<Hypothesis> out = pool.empty() ? live : pool;
  std::sort(out.begin(), out.end(), better);
  if (out.size() > static_cast<std::size_t>(config.n_best)) out.resize(config.n_best);
  return out;
}

Hypothesis greedy(StepScorer& scorer, const BeamConfig& config, int limit) {
  const int vocab = scorer.vocab_size();
  const auto banned = banned_mask(config, vocab);
  Hypothesis h{{kBos}, 0.0, 0.0, false};
  for (int step = 1; step <= limit; ++step) {
    const auto lp = scorer.next({h.tokens})[0];
    int best = -1;
    for (int v = 0; v < vocab; ++v) {
      if (banned[v]) continue;
      if (best < 0 || lp[v] > lp[best]) best = v;
    }
    h.tokens.push_back(best);
    h.log_prob += lp[best];
    if (best == kEos) {
      h.finished = true;
      break;
    }
  }
  h.score = normalized(h.log_prob, h.steps(), config.norm);
  return h;
}

template <typename T>
std::vector<Hypothesis> beam_search(const model::ModelParams<T>& params,
                                    const std::vector<int>& source, const BeamConfig& config) {
  config.validate(params.config.max_seq_len);
  check_source(source, config);
  ModelStepScorer<T> scorer(params, source);
  return beam_search(scorer, config, config.limit_for(source.size()));
}

template <typename T>
Hypothesis greedy(const model::ModelParams<T>& params, const std::vector<int>& source,
                  const BeamConfig& config) {
  config.validate(params.config.max_seq_len);
  check_source(source, config);
  ModelStepScorer<T> scorer(params, source);
  return greedy(scorer, config, config.limit_for(source.size()));
}

template <typename T>
double sequence_log_prob(const model::ModelParams<T>& params, const std::vector<int>& source,
                         const std::vector<int>& tokens) {
  if (tokens.size() < 2 || tokens.front() != kBos) {
    throw InvalidArgument("sequence_log_prob: need BOS followed by at least one token");
  }
  model::Batch b;
  b.id = "rescore";
  b.batch_size = 1;
  b.src = source;
  b.src_len = source.size();
  b.src_mask.assign(source.size(), 1);
  b.tgt_len = tokens.size() - 1;
  b.tgt_in.assign(tokens.begin(), tokens.end() - 1);
  b.tgt_out.assign(tokens.begin() + 1, tokens.end());
  b.tgt_mask.assign(b.tgt_len, 1);
  const auto lp = model::forward_logprobs(params, b);
  double total = 0.0;
  for (std::size_t t = 0; t < b.tgt_len; ++t) total += lp(t, b.tgt_out[t]);
  return total;
}

template <typename T>
std::string translate(const model::ModelParams<T>& params, const subword::SubwordModel& spm,
                      const std::string& text, const std::string& target_lang,
                      BeamConfig config) {
  const int tag = spm.tag_id(target_lang);
  if (text.empty()) return "";
  config.tag_ids.clear();
  for (const auto& code : spm.tag_codes()) config.tag_ids.push_back(spm.tag_id(code));
  std::vector<int> source = {tag};
  const auto body = spm.encode(text);
  source.insert(source.end(), body.begin(), body.end());
  const auto hyps = beam_search(params, source, config);
  return spm.decode(hyps.front().output());
}

template <typename T>
std::vector<std::string> translate_lines(const model::ModelParams<T>& params,
                                         const subword::SubwordModel& spm,
                                         const std::vector<std::string>& lines,
                                         const std::string& target_lang,
                                         const BeamConfig& config) {
  std::vector<std::string> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(translate(params, spm, l, target_lang, config));
  return out;
}

#define H2KE_INSTANTIATE(T)                                                                   \
  template class ModelStepScorer<T>;                                                          \
  template std::vector<Hypothesis> beam_search<T>(const model::ModelParams<T>&,               \
                                                  const std::vector<int>&, const BeamConfig&); \
  template Hypothesis greedy<T>(const model::ModelParams<T>&, const std::vector<int>&,        \
                                const BeamConfig&);                                           \
  template double sequence_log_prob<T>(const model::ModelParams<T>&, const std::vector<int>&, \
                                       const std::vector<int>&);                              \
  template std::string translate<T>(const model::ModelParams<T>&,                             \
                                    const subword::SubwordModel&, const std::string&,         \
                                    const std::string&, BeamConfig);                          \
  template std::vector<std::string> translate_lines<T>(                                       \
      const model::ModelParams<T>&, const subword::SubwordModel&,                             \
      const std::vector<std::string>&, const std::string&, const BeamConfig&);

H2KE_INSTANTIATE(float)
H2KE_INSTANTIATE(double)
#undef H2KE_INSTANTIATE

}  // namespace h2ke::decoding
