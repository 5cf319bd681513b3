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

#include <cstdio>
#include <set>

#include "h2ke/metrics.hpp"

namespace h2ke::metrics {

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::kAWins: return "A_wins";
    case Outcome::kBWins: return "B_wins";
    case Outcome::kTie: return "tie";
  }
  return "tie";
}

Outcome parse_outcome(std::string_view s) {
  if (s == "A_wins") return Outcome::kAWins;
  if (s == "B_wins") return Outcome::kBWins;
  if (s == "tie") return Outcome::kTie;
  throw ParseError("unknown comparison result '" + std::string(s) +
                   "' (expected A_wins, B_wins or tie)");
}

nlohmann::json ComparisonOutcome::to_json() const {
  return {{"item", item}, {"system_a", system_a}, {"system_b", system_b},
          {"result", to_string(result)}};
}

ComparisonOutcome ComparisonOutcome::from_json(const nlohmann::json& j) {
  try {
    ComparisonOutcome o{j.at("item").get<std::string>(), j.at("system_a").get<std::string>(),
                        j.at("system_b").get<std::string>(),
                        parse_outcome(j.at("result").get<std::string>())};
    if (o.system_a == o.system_b) throw ParseError("comparison of system '" + o.system_a + "' with itself");
    return o;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed comparison outcome: ") + e.what());
  }
}

std::vector<ComparisonOutcome> compare_ppl(const std::vector<SystemScores>& systems) {
  std::set<std::string> names, items;
  for (const auto& s : systems) {
    if (!names.insert(s.system).second) {
      throw InvalidArgument("system '" + s.system + "' appears twice");
    }
    for (const auto& [id, _] : s.ppl) items.insert(id);
  }
  for (const auto& s : systems) {
    for (const auto& id : items) {
      if (!s.ppl.count(id)) {
        throw InvalidArgument("item '" + id + "' has no score for system '" + s.system + "'");
      }
    }
  }
  std::vector<ComparisonOutcome> out;
  for (std::size_t i = 0; i < systems.size(); ++i) {
    for (std::size_t j = i + 1; j < systems.size(); ++j) {
      for (const auto& id : items) {
        const double a = systems[i].ppl.at(id), b = systems[j].ppl.at(id);
        const Outcome r = a < b ? Outcome::kAWins : b < a ? Outcome::kBWins : Outcome::kTie;
        out.push_back({id, systems[i].system, systems[j].system, r});
      }
    }
  }
  return out;
}

nlohmann::json WinRate::to_json() const {
  return {{"a", a}, {"b", b}, {"n", n}, {"win", win}, {"tie", tie}, {"loss", loss}};
}

WinRate winning_rate(const std::vector<ComparisonOutcome>& outcomes, const std::string& a,
                     const std::string& b) {
  WinRate r{a, b};
  std::size_t w = 0, t = 0, l = 0;
  for (const auto& o : outcomes) {
    const bool same = o.system_a == a && o.system_b == b;
    const bool flipped = o.system_a == b && o.system_b == a;
    if (!same && !flipped) continue;
    if (o.result == Outcome::kTie) {
      ++t;
    } else if ((o.result == Outcome::kAWins) == same) {
      ++w;
    } else {
      ++l;
    }
  }
  r.n = w + t + l;
  if (r.n > 0) {
    const double n = static_cast<double>(r.n);
    r.win = 100.0 * static_cast<double>(w) / n;
    r.tie = 100.0 * static_cast<double>(t) / n;
    r.loss = 100.0 * static_cast<double>(l) / n;
  }
  return r;
}

std::vector<WinRate> winning_rates(const std::vector<ComparisonOutcome>& outcomes) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& o : outcomes) {
    auto key = std::minmax(o.system_a, o.system_b);
    if (seen.emplace(key.first, key.second).second) pairs.emplace_back(o.system_a, o.system_b);
  }
  std::vector<WinRate> out;
  for (const auto& [a, b] : pairs) out.push_back(winning_rate(outcomes, a, b));
  return out;
}

std::string format_win_table(const std::vector<WinRate>& rows) {
  std::size_t wa = 1, wb = 1;
  for (const auto& r : rows) {
    wa = std::max(wa, r.a.size());
    wb = std::max(wb, r.b.size());
  }
  auto line = [&](const std::string& a, const std::string& b, const std::string& w,
                  const std::string& t, const std::string& l, const std::string& n) {
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %-*s  %8s  %8s  %8s  %6s\n", static_cast<int>(wa),
                  a.c_str(), static_cast<int>(wb), b.c_str(), w.c_str(), t.c_str(), l.c_str(),
                  n.c_str());
    return std::string(buf);
  };
  auto pct = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string out = line("A", "B", "win", "tie", "loss", "n");
  for (const auto& r : rows) {
    out += line(r.a, r.b, pct(r.win), pct(r.tie), pct(r.loss), std::to_string(r.n));
  }
  return out;
}

}  // namespace h2ke::metrics
