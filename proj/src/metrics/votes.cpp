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
#include <map>

#include "h2ke/metrics.hpp"

namespace h2ke::metrics {

std::string to_string(Vote v) {
  switch (v) {
    case Vote::kA: return "A";
    case Vote::kB: return "B";
    case Vote::kNoDifference: return "ND";
  }
  return "ND";
}

Vote parse_vote(std::string_view s) {
  if (s == "A") return Vote::kA;
  if (s == "B") return Vote::kB;
  if (s == "ND" || s == "no_difference") return Vote::kNoDifference;
  throw ParseError("unknown vote '" + std::string(s) + "' (expected A, B or ND)");
}

Vote majority_vote(const std::vector<Vote>& responses) {
  if (responses.size() != 3) {
    throw InvalidArgument("majority vote needs exactly 3 responses, got " +
                          std::to_string(responses.size()));
  }
  return strict_majority(responses);
}

Vote strict_majority(const std::vector<Vote>& responses) {
  if (responses.empty()) throw InvalidArgument("majority vote over no responses");
  std::size_t count[3] = {0, 0, 0};
  for (Vote v : responses) ++count[static_cast<int>(v)];
  for (int c = 0; c < 3; ++c) {
    if (2 * count[c] > responses.size()) return static_cast<Vote>(c);
  }
  return Vote::kNoDifference;
}

nlohmann::json WinRateReport::to_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : pairings) {
    nlohmann::json sheets = nlohmann::json::array();
    for (const auto& s : p.sheets) {
      sheets.push_back({{"sheet", s.sheet}, {"n", s.n}, {"win", s.win}, {"tie", s.tie},
                        {"loss", s.loss}});
    }
    out.push_back({{"a", p.a},
                   {"b", p.b},
                   {"sheets", sheets},
                   {"mean", {{"win", p.mean_win}, {"tie", p.mean_tie}, {"loss", p.mean_loss}}},
                   {"std", {{"win", p.std_win}, {"tie", p.std_tie}, {"loss", p.std_loss}}}});
  }
  return {{"pairings", out}};
}

WinRateReport sheet_win_rates(const std::vector<SheetDecision>& decisions) {
  struct Counts {
    std::size_t w = 0, t = 0, l = 0;
  };
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, std::map<std::string, Counts>> table;
  for (const auto& d : decisions) {
    std::pair<std::string, std::string> key{d.system_a, d.system_b};
    bool flipped = false;
    if (!table.count(key)) {
      if (table.count({d.system_b, d.system_a})) {
        key = {d.system_b, d.system_a};
        flipped = true;
      } else {
        order.push_back(key);
      }
    }
    auto& c = table[key][d.sheet];
    if (d.decision == Vote::kNoDifference) {
      ++c.t;
    } else if ((d.decision == Vote::kA) != flipped) {
      ++c.w;
    } else {
      ++c.l;
    }
  }
  WinRateReport rep;
  for (const auto& key : order) {
    PairingReport p;
    p.a = key.first;
    p.b = key.second;
    for (const auto& [sheet, c] : table[key]) {
      SheetRate r{sheet, c.w + c.t + c.l};
      const double n = static_cast<double>(r.n);
      r.win = static_cast<double>(c.w) / n;
      r.tie = static_cast<double>(c.t) / n;
      r.loss = static_cast<double>(c.l) / n;
      p.sheets.push_back(r);
    }
    const double m = static_cast<double>(p.sheets.size());
    for (const auto& r : p.sheets) {
      p.mean_win += r.win / m;
      p.mean_tie += r.tie / m;
      p.mean_loss += r.loss / m;
    }
    for (const auto& r : p.sheets) {
      p.std_win += (r.win - p.mean_win) * (r.win - p.mean_win) / m;
      p.std_tie += (r.tie - p.mean_tie) * (r.tie - p.mean_tie) / m;
      p.std_loss += (r.loss - p.mean_loss) * (r.loss - p.mean_loss) / m;
    }
    p.std_win = std::sqrt(p.std_win);
    p.std_tie = std::sqrt(p.std_tie);
    p.std_loss = std::sqrt(p.std_loss);
    rep.pairings.push_back(std::move(p));
  }
  return rep;
}

}  // namespace h2ke::metrics
