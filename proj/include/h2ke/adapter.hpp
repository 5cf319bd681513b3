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

#include <chrono>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "h2ke/error.hpp"

namespace h2ke {

// Failure of one adapter request (timeout, malformed reply, dead process).
// The adapter itself stays usable after timeouts and malformed replies.
class AdapterError : public Error {
 public:
  using Error::Error;
};

// Long-running subprocess speaking newline-delimited JSON. Each request gets
// a "seq" field; replies carrying an older seq (late answers to requests
// that already timed out) are discarded.
class LineAdapter {
 public:
  // `command` is split on whitespace; single and double quotes group words.
  explicit LineAdapter(const std::string& command,
                       std::chrono::milliseconds timeout = std::chrono::seconds(10));
  ~LineAdapter();
  LineAdapter(const LineAdapter&) = delete;
  LineAdapter& operator=(const LineAdapter&) = delete;

  nlohmann::json request(nlohmann::json payload);

  const std::string& command() const { return command_; }
  void set_timeout(std::chrono::milliseconds t) { timeout_ = t; }

 private:
  bool read_line(std::string& line, std::chrono::steady_clock::time_point deadline);

  std::string command_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::uint64_t seq_ = 0;
};

std::vector<std::string> split_command(const std::string& command);

}  // namespace h2ke
