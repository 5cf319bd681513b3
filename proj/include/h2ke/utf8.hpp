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

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace h2ke::utf8 {

// Splits a UTF-8 string into its code points. Invalid bytes are mapped to
// U+FFFD one byte at a time.
std::vector<char32_t> decode(std::string_view text);

std::string encode(char32_t cp);
std::string encode(const std::vector<char32_t>& cps);

// Splits into one std::string per code point.
std::vector<std::string> split_chars(std::string_view text);

bool is_whitespace(char32_t cp);
bool is_hangul(char32_t cp);
bool is_han(char32_t cp);

// Strips leading and trailing Unicode whitespace.
std::string trim(std::string_view text);

}  // namespace h2ke::utf8
