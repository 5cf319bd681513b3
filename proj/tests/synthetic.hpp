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

#include "h2ke/rng.hpp"

namespace h2ke::testing {

// Two writing styles over the same eight letters. Inside a word, style A
// steps forward through the alphabet by 1 or 2; style B steps backward by 1
// or forward by 3. Both share the sentence shape (3 to 6 words of 2 to 5
// letters), so only the local letter order tells them apart.
inline std::vector<std::string> style_sentences(char style, std::size_t n, std::uint64_t seed) {
  static const std::string alphabet = "abcdefgh";
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(style)));
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::string s;
    const auto words = 3 + rng.index(4);
    for (std::size_t w = 0; w < words; ++w) {
      if (w) s += ' ';
      auto pos = rng.index(8);
      const auto len = 2 + rng.index(4);
      for (std::size_t k = 0; k < len; ++k) {
        s += alphabet[pos];
        const bool first = rng.index(2) == 0;
        if (style == 'A') {
          pos = (pos + (first ? 1 : 2)) % 8;
        } else {
          pos = (pos + (first ? 7 : 3)) % 8;
        }
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace h2ke::testing
