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

#include "h2ke/metrics.hpp"
#include "h2ke/utf8.hpp"

namespace h2ke::metrics {

PretokScheme parse_pretok_scheme(std::string_view name) {
  if (name == "whitespace") return PretokScheme::kWhitespace;
  if (name == "char") return PretokScheme::kChar;
  if (name == "adapter" || name == "external-adapter") return PretokScheme::kAdapter;
  throw InvalidArgument("unknown pre-tokenization scheme '" + std::string(name) +
                        "' (expected whitespace, char or adapter)");
}

Tokens pretokenize(std::string_view text, PretokScheme scheme) {
  Tokens out;
  std::string cur;
  for (char32_t cp : utf8::decode(text)) {
    if (utf8::is_whitespace(cp)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (scheme == PretokScheme::kChar) {
      out.push_back(utf8::encode(cp));
    } else if (scheme == PretokScheme::kWhitespace) {
      cur += utf8::encode(cp);
    } else {
      throw InvalidArgument("adapter pre-tokenization needs an AdapterPretokenizer");
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

AdapterPretokenizer::AdapterPretokenizer(const std::string& command,
                                         std::chrono::milliseconds timeout)
    : adapter_(command, timeout) {}

Tokens AdapterPretokenizer::operator()(std::string_view text) {
  const auto reply = adapter_.request({{"text", std::string(text)}});
  const auto it = reply.find("tokens");
  if (it == reply.end() || !it->is_array()) {
    throw AdapterError("adapter protocol violation: expected {tokens: [...]}, got " + reply.dump());
  }
  Tokens out;
  for (const auto& t : *it) {
    if (!t.is_string()) {
      throw AdapterError("adapter protocol violation: non-string token in " + reply.dump());
    }
    out.push_back(t.get<std::string>());
  }
  return out;
}

}  // namespace h2ke::metrics
