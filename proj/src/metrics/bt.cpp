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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "h2ke/metrics.hpp"

namespace h2ke::metrics {

double sign_test_p_value(std::size_t k, std::size_t n) {
  if (k > n) throw InvalidArgument("sign test: k > n");
  if (n == 0) return 1.0;
  const std::size_t m = std::min(k, n - k);
  const double nd = static_cast<double>(n);
  double tail = 0.0;
  for (std::size_t i = 0; i <= m; ++i) {
    const double id = static_cast<double>(i);
    tail += std::exp(std::lgamma(nd + 1) - std::lgamma(id + 1) - std::lgamma(nd - id + 1) -
                     nd * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

double BtFit::probability(const std::string& a, const std::string& b) const {
  const auto ia = std::find(systems.begin(), systems.end(), a);
  const auto ib = std::find(systems.begin(), systems.end(), b);
  if (ia == systems.end() || ib == systems.end()) {
    throw InvalidArgument("unknown system in BT lookup: " + (ia == systems.end() ? a : b));
  }
  return prob[ia - systems.begin()][ib - systems.begin()];
}

nlohmann::json BtFit::to_json() const {
  nlohmann::json j;
  j["systems"] = systems;
  j["strengths"] = strengths;
  j["probability"] = prob;
  j["sweeps"] = sweeps;
  j["converged"] = converged;
  j["log_likelihood"] = log_likelihood.empty() ? 0.0 : log_likelihood.back();
  j["pairs"] = nlohmann::json::array();
  for (const auto& p : pairs) {
    j["pairs"].push_back({{"a", p.a},
                          {"b", p.b},
                          {"wins_a", p.wins_a},
                          {"wins_b", p.wins_b},
                          {"ties", p.ties},
                          {"decisive", p.wins_a + p.wins_b},
                          {"probability", p.probability},
                          {"p_value", p.p_value},
                          {"significant", p.significant}});
  }
  return j;
}

BtFit fit_bt(const std::vector<ComparisonOutcome>& outcomes, const BtOptions& options) {
  BtFit fit;
  auto index_of = [&](const std::string& s) {
    auto it = std::find(fit.systems.begin(), fit.systems.end(), s);
    if (it != fit.systems.end()) return static_cast<std::size_t>(it - fit.systems.begin());
    fit.systems.push_back(s);
    return fit.systems.size() - 1;
  };
  struct Raw {
    std::size_t a, b;
    Outcome r;
  };
  std::vector<Raw> raw;
  for (const auto& o : outcomes) {
    if (o.system_a == o.system_b) throw InvalidArgument("outcome compares '" + o.system_a + "' with itself");
    const auto a = index_of(o.system_a);
    const auto b = index_of(o.system_b);
    raw.push_back({a, b, o.result});
  }
  const std::size_t k = fit.systems.size();
  if (k < 2) throw InvalidArgument("Bradley-Terry needs at least two systems");

  std::vector<std::vector<double>> w(k, std::vector<double>(k, 0.0));
  std::vector<std::vector<std::size_t>> ties(k, std::vector<std::size_t>(k, 0));
  std::vector<std::vector<bool>> seen(k, std::vector<bool>(k, false));
  for (const auto& r : raw) {
    seen[r.a][r.b] = seen[r.b][r.a] = true;
    if (r.r == Outcome::kAWins) w[r.a][r.b] += 1;
    if (r.r == Outcome::kBWins) w[r.b][r.a] += 1;
    if (r.r == Outcome::kTie) {
      ++ties[r.a][r.b];
      ++ties[r.b][r.a];
    }
  }

  // Connectivity over decisive comparisons.
  std::vector<int> comp(k, -1);
  int n_comp = 0;
  for (std::size_t s = 0; s < k; ++s) {
    if (comp[s] >= 0) continue;
    std::vector<std::size_t> stack = {s};
    comp[s] = n_comp;
    while (!stack.empty()) {
      const auto u = stack.back();
      stack.pop_back();
      for (std::size_t v = 0; v < k; ++v) {
        if (comp[v] < 0 && w[u][v] + w[v][u] > 0) {
          comp[v] = n_comp;
          stack.push_back(v);
        }
      }
    }
    ++n_comp;
  }
  if (n_comp > 1) {
    std::string msg = "comparison graph over decisive outcomes is disconnected; components:";
    for (int c = 0; c < n_comp; ++c) {
      msg += c ? " | " : " ";
      bool first = true;
      for (std::size_t s = 0; s < k; ++s) {
        if (comp[s] != c) continue;
        msg += (first ? "" : ", ") + fit.systems[s];
        first = false;
      }
    }
    throw InvalidArgument(msg);
  }
  std::vector<double> wins(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double losses = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      wins[i] += w[i][j];
      losses += w[j][i];
    }
    if (wins[i] == 0 || losses == 0) {
      throw InvalidArgument("system '" + fit.systems[i] + "' has " +
                            (wins[i] == 0 ? "no decisive win" : "no decisive loss") +
                            "; its Bradley-Terry strength has no finite estimate");
    }
  }

  auto log_likelihood = [&](const std::vector<double>& s) {
    double ll = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        if (w[i][j] > 0) ll += w[i][j] * std::log(s[i] / (s[i] + s[j]));
      }
    }
    return ll;
  };

  std::vector<double> s(k, 1.0 / static_cast<double>(k)), next(k);
  for (fit.sweeps = 0; fit.sweeps < options.max_sweeps;) {
    for (std::size_t i = 0; i < k; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double n_ij = w[i][j] + w[j][i];
        if (j != i && n_ij > 0) denom += n_ij / (s[i] + s[j]);
      }
      next[i] = wins[i] / denom;
    }
    const double total = std::accumulate(next.begin(), next.end(), 0.0);
    double change = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      next[i] /= total;
      change = std::max(change, std::abs(next[i] - s[i]));
    }
    s.swap(next);
    ++fit.sweeps;
    fit.log_likelihood.push_back(log_likelihood(s));
    if (change < options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.strengths = s;
  fit.prob.assign(k, std::vector<double>(k, 0.5));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) fit.prob[i][j] = s[i] / (s[i] + s[j]);
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      if (!seen[i][j]) continue;
      BtPair p{fit.systems[i], fit.systems[j]};
      p.wins_a = static_cast<std::size_t>(w[i][j]);
      p.wins_b = static_cast<std::size_t>(w[j][i]);
      p.ties = ties[i][j];
      const auto decisive = p.wins_a + p.wins_b;
      p.probability = decisive == 0 ? 0.5 : fit.prob[i][j];
      p.p_value = sign_test_p_value(p.wins_a, decisive);
      p.significant = p.p_value < 0.05;
      fit.pairs.push_back(p);
    }
  }
  return fit;
}

}  // namespace h2ke::metrics
