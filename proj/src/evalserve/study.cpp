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
#include <numeric>
#include <set>

#include "h2ke/evalserve.hpp"
#include "h2ke/rng.hpp"

namespace h2ke::evalserve {

namespace {

std::string item_id(const nlohmann::json& j, std::size_t index) {
  if (!j.contains("id")) return std::to_string(index + 1);
  const auto& v = j["id"];
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw ParseError("item " + std::to_string(index + 1) + ": id must be a string or integer");
}

std::string join(const std::set<std::string>& s) {
  std::string out = "{";
  for (const auto& x : s) out += (out.size() > 1 ? ", " : "") + x;
  return out + "}";
}

int positive_int(const nlohmann::json& cfg, const char* key, int fallback) {
  if (!cfg.contains(key)) return fallback;
  const auto& v = cfg[key];
  if (!v.is_number_integer() || v.get<long long>() < 1) {
    throw ParseError(std::string("config.") + key + " must be a positive integer");
  }
  return v.get<int>();
}

}  // namespace

Choice parse_choice(const std::string& s) {
  if (s == "left") return Choice::kLeft;
  if (s == "right") return Choice::kRight;
  if (s == "no_difference") return Choice::kNoDifference;
  throw ParseError("choice must be left, right or no_difference, got '" + s + "'");
}

std::string to_string(Choice c) {
  switch (c) {
    case Choice::kLeft: return "left";
    case Choice::kRight: return "right";
    case Choice::kNoDifference: return "no_difference";
  }
  return "no_difference";
}

Study build_study(const nlohmann::json& payload, const std::string& id,
                  const std::function<std::string()>& make_token) {
  if (!payload.is_object()) throw ParseError("study payload must be a JSON object");
  if (payload.contains("version") && payload["version"] != kSchemaVersion) {
    throw ParseError("unsupported study schema version " + payload["version"].dump());
  }
  Study st;
  st.id = id;
  st.payload = payload;
  if (payload.contains("seed")) {
    const auto& seed = payload["seed"];
    if (!seed.is_number_integer() || (!seed.is_number_unsigned() && seed.get<long long>() < 0)) {
      throw ParseError("seed must be a non-negative integer");
    }
    st.seed = seed.get<std::uint64_t>();
  }
  if (payload.contains("config")) {
    const auto& cfg = payload["config"];
    if (!cfg.is_object()) throw ParseError("config must be an object");
    st.config.pairs_per_sheet = positive_int(cfg, "pairs_per_sheet", st.config.pairs_per_sheet);
    st.config.evaluators_per_pair =
        positive_int(cfg, "evaluators_per_pair", st.config.evaluators_per_pair);
  }

  const bool declared = payload.contains("systems");
  if (declared) {
    if (!payload["systems"].is_array()) throw ParseError("systems must be an array of labels");
    std::set<std::string> seen;
    for (const auto& s : payload["systems"]) {
      if (!s.is_string() || s.get<std::string>().empty()) {
        throw ParseError("system labels must be non-empty strings");
      }
      if (!seen.insert(s.get<std::string>()).second) {
        throw ParseError("system '" + s.get<std::string>() + "' declared twice");
      }
      st.systems.push_back(s.get<std::string>());
    }
  }

  if (!payload.contains("items") || !payload["items"].is_array() || payload["items"].empty()) {
    throw ParseError("study payload needs a non-empty items array");
  }
  std::set<std::string> item_ids;
  std::set<std::string> first_set;
  for (std::size_t i = 0; i < payload["items"].size(); ++i) {
    const auto& j = payload["items"][i];
    if (!j.is_object() || !j.contains("candidates") || !j["candidates"].is_object()) {
      throw ParseError("item " + std::to_string(i + 1) + " needs a candidates object");
    }
    StudyItem item{item_id(j, i), {}};
    if (!item_ids.insert(item.id).second) throw ParseError("duplicate item id '" + item.id + "'");
    std::set<std::string> systems;
    for (const auto& [sys, text] : j["candidates"].items()) {
      if (!text.is_string() || text.get<std::string>().empty()) {
        throw ParseError("item '" + item.id + "': candidate for '" + sys + "' must be non-empty text");
      }
      systems.insert(sys);
    }
    if (systems.size() < 2) {
      throw InvalidArgument("item '" + item.id + "' needs at least two systems");
    }
    if (declared) {
      for (const auto& s : systems) {
        if (std::find(st.systems.begin(), st.systems.end(), s) == st.systems.end()) {
          throw InvalidArgument("item '" + item.id + "' uses undeclared system '" + s + "'");
        }
      }
    } else if (i == 0) {
      first_set = systems;
      st.systems.assign(systems.begin(), systems.end());
    } else if (systems != first_set) {
      throw InvalidArgument("inconsistent system sets: item '" + item.id + "' has " + join(systems) +
                            ", expected " + join(first_set));
    }
    for (const auto& s : st.systems) {
      if (systems.count(s)) item.candidates.emplace_back(s, j["candidates"][s].get<std::string>());
    }
    st.items.push_back(std::move(item));
  }

  for (std::size_t i = 0; i < st.items.size(); ++i) {
    const auto& c = st.items[i].candidates;
    for (std::size_t a = 0; a < c.size(); ++a) {
      for (std::size_t b = a + 1; b < c.size(); ++b) {
        PairDef p;
        p.id = "p" + std::to_string(st.pairs.size() + 1);
        p.item = i;
        p.system_a = c[a].first;
        p.text_a = c[a].second;
        p.system_b = c[b].first;
        p.text_b = c[b].second;
        st.pairs.push_back(std::move(p));
      }
    }
  }

  std::vector<std::size_t> order(st.pairs.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(st.seed, 1));
  rng.shuffle(order);
  const auto per = static_cast<std::size_t>(st.config.pairs_per_sheet);
  for (std::size_t k = 0; k < order.size(); k += per) {
    st.sheets.emplace_back(order.begin() + k, order.begin() + std::min(order.size(), k + per));
    for (auto p : st.sheets.back()) st.pairs[p].sheet = st.sheets.size() - 1;
  }

  const auto slots = static_cast<std::size_t>(st.config.evaluators_per_pair);
  for (std::size_t s = 0; s < st.sheets.size(); ++s) {
    for (std::size_t e = 0; e < slots; ++e) {
      Assignment a;
      a.token = make_token();
      a.sheet = s;
      a.order = st.sheets[s];
      Rng r(mix_seed(st.seed, 1000 + s * slots + e));
      r.shuffle(a.order);
      for (std::size_t k = 0; k < a.order.size(); ++k) a.a_on_left.push_back(r.index(2) == 0);
      st.assignments.push_back(std::move(a));
    }
  }
  return st;
}

}  // namespace h2ke::evalserve
