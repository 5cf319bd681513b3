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

#include "h2ke/adapter.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace h2ke {

std::vector<std::string> split_command(const std::string& command) {
  std::vector<std::string> words;
  std::string cur;
  bool in_word = false;
  char quote = 0;
  for (char c : command) {
    if (quote) {
      if (c == quote) {
        quote = 0;
      } else {
        cur += c;
      }
    } else if (c == '\'' || c == '"') {
      quote = c;
      in_word = true;
    } else if (c == ' ' || c == '\t' || c == '\n') {
      if (in_word) words.push_back(std::move(cur));
      cur.clear();
      in_word = false;
    } else {
      cur += c;
      in_word = true;
    }
  }
  if (quote) throw InvalidArgument("unterminated quote in adapter command: " + command);
  if (in_word) words.push_back(std::move(cur));
  if (words.empty()) throw InvalidArgument("empty adapter command");
  return words;
}

LineAdapter::LineAdapter(const std::string& command, std::chrono::milliseconds timeout)
    : command_(command), timeout_(timeout) {
  const auto words = split_command(command);
  int in_pipe[2], out_pipe[2], err_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0 || pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw Error("adapter: cannot create pipes: " + std::string(std::strerror(errno)));
  }
  std::signal(SIGPIPE, SIG_IGN);
  pid_ = fork();
  if (pid_ < 0) throw Error("adapter: fork failed: " + std::string(std::strerror(errno)));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    close(err_pipe[0]);
    std::vector<char*> argv;
    for (const auto& w : words) argv.push_back(const_cast<char*>(w.c_str()));
    argv.push_back(nullptr);
    execvp(argv[0], argv.data());
    const int e = errno;
    [[maybe_unused]] auto n = write(err_pipe[1], &e, sizeof e);
    _exit(127);
  }
  close(in_pipe[0]);
  close(out_pipe[1]);
  close(err_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  int child_errno = 0;
  const auto n = read(err_pipe[0], &child_errno, sizeof child_errno);
  close(err_pipe[0]);
  if (n == static_cast<ssize_t>(sizeof child_errno)) {
    waitpid(pid_, nullptr, 0);
    pid_ = -1;
    close(to_child_);
    close(from_child_);
    throw AdapterError("adapter '" + words[0] + "' cannot be started: " +
                       std::strerror(child_errno));
  }
}

LineAdapter::~LineAdapter() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  if (pid_ > 0) {
    // Closing stdin asks the adapter to exit; give it a moment, then stop it.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, nullptr, WNOHANG) == pid_) return;
      usleep(2000);
    }
    kill(pid_, SIGKILL);
    waitpid(pid_, nullptr, 0);
  }
}

bool LineAdapter::read_line(std::string& line, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      return true;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd p{from_child_, POLLIN, 0};
    const int r = poll(&p, 1, static_cast<int>(left.count()));
    if (r < 0 && errno == EINTR) continue;
    if (r <= 0) return false;
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n <= 0) throw AdapterError("adapter '" + command_ + "' exited");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

nlohmann::json LineAdapter::request(nlohmann::json payload) {
  const std::uint64_t seq = ++seq_;
  payload["seq"] = seq;
  const std::string out = payload.dump() + "\n";
  std::size_t sent = 0;
  while (sent < out.size()) {
    const ssize_t n = write(to_child_, out.data() + sent, out.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw AdapterError("adapter '" + command_ + "' is not accepting input");
    }
    sent += static_cast<std::size_t>(n);
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::string line;
  for (;;) {
    if (!read_line(line, deadline)) {
      throw AdapterError("adapter timed out after " + std::to_string(timeout_.count()) + " ms");
    }
    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw AdapterError("adapter protocol violation: unparsable reply '" + line + "'");
    }
    if (!reply.is_object()) {
      throw AdapterError("adapter protocol violation: reply is not an object '" + line + "'");
    }
    if (reply.contains("seq")) {
      if (!reply["seq"].is_number_unsigned()) {
        throw AdapterError("adapter protocol violation: bad seq in '" + line + "'");
      }
      const auto got = reply["seq"].get<std::uint64_t>();
      if (got < seq) continue;  // stale answer to an abandoned request
      if (got > seq) {
        throw AdapterError("adapter protocol violation: reply for future request in '" + line +
                           "'");
      }
    }
    if (reply.contains("error")) {
      throw AdapterError("adapter reported: " + reply["error"].dump());
    }
    return reply;
  }
}

}  // namespace h2ke
