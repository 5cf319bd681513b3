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
#include <set>

#include "h2ke/metrics.hpp"
#include "h2ke/utf8.hpp"

namespace h2ke::metrics {

std::vector<std::string> extract_annotations(std::string_view text) {
  const auto cps = utf8::decode(text);
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (!utf8::is_hangul(cps[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < cps.size() && utf8::is_hangul(cps[j])) ++j;
    // cps[i, j) is a maximal Hangul run.
    if (j < cps.size() && cps[j] == U'(') {
      std::size_t k = j + 1;
      while (k < cps.size() && utf8::is_han(cps[k])) ++k;
      if (k > j + 1 && k < cps.size() && cps[k] == U')') {
        out.push_back(utf8::encode(std::vector<char32_t>(cps.begin() + i, cps.begin() + k + 1)));
        i = k + 1;
        continue;
      }
    }
    i = j;
  }
  return out;
}

nlohmann::json TranslitReport::to_json() const {
  nlohmann::json items_json = nlohmann::json::array();
  for (const auto& it : items) {
    items_json.push_back({{"index", it.index},
                          {"old_annotations", it.old_annotations},
                          {"archaic", it.archaic},
                          {"replaced", it.replaced}});
  }
  return {{"archaic_set", archaic_set},
          {"archaic_occurrences", archaic_occurrences},
          {"replaced_occurrences", replaced_occurrences},
          {"replacement_rate", replacement_rate},
          {"no_archaic_set", no_archaic_set},
          {"items", items_json}};
}

TranslitReport transliteration_stats(const std::vector<std::string>& old_translations,
                                     const std::vector<std::string>& reference,
                                     const std::vector<std::string>* candidate) {
  if (old_translations.size() != reference.size() ||
      (candidate && candidate->size() != reference.size())) {
    throw InvalidArgument("transliteration analysis needs aligned lists of equal length");
  }
  const auto& measured = candidate ? *candidate : reference;
  TranslitReport rep;
  std::set<std::string> archaic_set;
  for (std::size_t i = 0; i < old_translations.size(); ++i) {
    const auto old_ann = extract_annotations(old_translations[i]);
    if (old_ann.empty()) continue;
    const auto ref_ann = extract_annotations(reference[i]);
    const auto cand_ann = extract_annotations(measured[i]);
    const std::set<std::string> ref_set(ref_ann.begin(), ref_ann.end());
    const std::set<std::string> cand_set(cand_ann.begin(), cand_ann.end());
    TranslitItem item;
    item.index = i;
    item.old_annotations = old_ann.size();
    for (const auto& a : std::set<std::string>(old_ann.begin(), old_ann.end())) {
      if (ref_set.count(a)) continue;
      item.archaic.push_back(a);
      archaic_set.insert(a);
      if (!cand_set.count(a)) item.replaced.push_back(a);
    }
    rep.archaic_occurrences += item.archaic.size();
    rep.replaced_occurrences += item.replaced.size();
    rep.items.push_back(std::move(item));
  }
  rep.archaic_set.assign(archaic_set.begin(), archaic_set.end());
  rep.no_archaic_set = rep.archaic_occurrences == 0;
  rep.replacement_rate = rep.no_archaic_set ? 0.0
                                            : static_cast<double>(rep.replaced_occurrences) /
                                                  static_cast<double>(rep.archaic_occurrences);
  return rep;
}

}  // namespace h2ke::metrics
