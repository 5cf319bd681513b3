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

#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>

#include "h2ke/metrics.hpp"

namespace h2ke::metrics {

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts count_ngrams(const Tokens& t, std::size_t n) {
  NgramCounts out;
  if (t.size() < n) return out;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    ++out[std::vector<std::string>(t.begin() + i, t.begin() + i + n)];
  }
  return out;
}

}  // namespace

BleuSmoothing parse_smoothing(std::string_view name) {
  if (name == "none") return BleuSmoothing::kNone;
  if (name == "exp" || name == "exp-decay") return BleuSmoothing::kExpDecay;
  throw InvalidArgument("unknown BLEU smoothing '" + std::string(name) +
                        "' (expected none or exp-decay)");
}

std::string to_string(BleuSmoothing s) { return s == BleuSmoothing::kNone ? "none" : "exp-decay"; }

nlohmann::json BleuReport::to_json() const {
  return {{"score", score},
          {"precisions", precisions},
          {"matches", matches},
          {"totals", totals},
          {"brevity_penalty", brevity_penalty},
          {"hyp_length", hyp_length},
          {"ref_length", ref_length},
          {"smoothing", to_string(smoothing)}};
}

BleuReport corpus_bleu(const std::vector<Tokens>& hypotheses, const std::vector<Tokens>& references,
                       int max_n, BleuSmoothing smoothing) {
  std::vector<std::vector<Tokens>> refs;
  refs.reserve(references.size());
  for (const auto& r : references) refs.push_back({r});
  return corpus_bleu_multi(hypotheses, refs, max_n, smoothing);
}

BleuReport corpus_bleu_multi(const std::vector<Tokens>& hypotheses,
                             const std::vector<std::vector<Tokens>>& references, int max_n,
                             BleuSmoothing smoothing) {
  if (hypotheses.size() != references.size()) {
    throw InvalidArgument("BLEU: " + std::to_string(hypotheses.size()) + " hypotheses but " +
                          std::to_string(references.size()) + " references");
  }
  if (hypotheses.empty()) throw InvalidArgument("BLEU: empty corpus");
  if (max_n < 1) throw InvalidArgument("BLEU: max_n must be >= 1");

  const auto N = static_cast<std::size_t>(max_n);
  BleuReport rep;
  rep.smoothing = smoothing;
  rep.matches.assign(N, 0);
  rep.totals.assign(N, 0);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& refs = references[s];
    if (refs.empty()) throw InvalidArgument("BLEU: sentence " + std::to_string(s) + " has no reference");
    rep.hyp_length += hyp.size();
    std::size_t closest = refs.front().size();
    for (const auto& r : refs) {
      const auto d = std::llabs(static_cast<long long>(r.size()) - static_cast<long long>(hyp.size()));
      const auto best = std::llabs(static_cast<long long>(closest) - static_cast<long long>(hyp.size()));
      if (d < best || (d == best && r.size() < closest)) closest = r.size();
    }
    rep.ref_length += closest;
    for (std::size_t n = 1; n <= N; ++n) {
      const auto h = count_ngrams(hyp, n);
      NgramCounts max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, c] : count_ngrams(r, n)) max_ref[g] = std::max(max_ref[g], c);
      }
      for (const auto& [g, c] : h) {
        rep.totals[n - 1] += c;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) rep.matches[n - 1] += std::min(c, it->second);
      }
    }
  }

  rep.precisions.assign(N, 0.0);
  double decay = 1.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < N; ++n) {
    if (rep.totals[n] == 0) {
      any_zero = true;
      continue;
    }
    if (rep.matches[n] > 0) {
      rep.precisions[n] = 100.0 * static_cast<double>(rep.matches[n]) / static_cast<double>(rep.totals[n]);
    } else if (smoothing == BleuSmoothing::kExpDecay) {
      decay *= 2.0;
      rep.precisions[n] = 100.0 / (decay * static_cast<double>(rep.totals[n]));
    } else {
      any_zero = true;
    }
  }

  if (rep.hyp_length == 0) {
    rep.brevity_penalty = 0.0;
  } else if (rep.hyp_length < rep.ref_length) {
    rep.brevity_penalty =
        std::exp(1.0 - static_cast<double>(rep.ref_length) / static_cast<double>(rep.hyp_length));
  }
  if (any_zero || rep.brevity_penalty == 0.0) {
    rep.score = 0.0;
    return rep;
  }
  double log_sum = 0.0;
  for (double p : rep.precisions) log_sum += std::log(p / 100.0);
  rep.score = 100.0 * rep.brevity_penalty * std::exp(log_sum / static_cast<double>(N));
  return rep;
}

}  // namespace h2ke::metrics
