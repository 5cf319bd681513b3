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

#include <httplib.h>

#include "h2ke/evalserve.hpp"

namespace h2ke::evalserve {

namespace {

constexpr const char* kJson = "application/json; charset=utf-8";

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"version", kSchemaVersion},
                                 {"error", {{"code", code}, {"message", message}}}}
                      .dump(),
                  kJson);
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFound& e) {
      send_error(res, 404, "not_found", e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, "conflict", e.what());
    } catch (const ParseError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const InvalidArgument& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "bad_request", std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

nlohmann::json parse_body(const httplib::Request& req) {
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("request body is not valid JSON: ") + e.what());
  }
}

}  // namespace

struct EvalServer::Impl {
  EvalStore& store;
  httplib::Server http;
  explicit Impl(EvalStore& s) : store(s) {}
};

EvalServer::EvalServer(EvalStore& store, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(store)) {
  auto& http = impl_->http;
  auto& st = impl_->store;
  http.set_payload_max_length(64u << 20);
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  http.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  http.Post("/studies", guarded([&st](const httplib::Request& req, httplib::Response& res) {
              res.status = 201;
              res.set_content(st.create_study(parse_body(req)).dump(), kJson);
            }));
  http.Get(R"(/studies/([^/]+))",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             res.set_content(st.study_info(req.matches[1]).dump(), kJson);
           }));
  http.Get(R"(/studies/([^/]+)/results)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             const auto partial = req.get_param_value("partial");
             const bool want_partial = partial == "1" || partial == "true";
             res.set_content(st.results(req.matches[1], want_partial).dump(), kJson);
           }));
  http.Get(R"(/studies/([^/]+)/export)",
           guarded([&st](const httplib::Request& req, httplib::Response& res) {
             res.set_content(st.export_jsonl(req.matches[1]), "application/x-ndjson; charset=utf-8");
           }));
  http.Get("/next", guarded([&st](const httplib::Request& req, httplib::Response& res) {
             if (!req.has_param("token")) throw ParseError("missing token parameter");
             res.set_content(st.next_pair(req.get_param_value("token")).dump(), kJson);
           }));
  http.Post("/responses", guarded([&st](const httplib::Request& req, httplib::Response& res) {
              res.set_content(st.submit(parse_body(req)).dump(), kJson);
            }));
  if (static_dir) {
    if (!http.set_mount_point("/", static_dir->string())) {
      throw InvalidArgument("static directory '" + static_dir->string() + "' does not exist");
    }
  }
}

EvalServer::~EvalServer() { stop(); }

int EvalServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->http.bind_to_any_port(host);
    if (p < 0) throw Error("cannot bind to " + host);
    return p;
  }
  if (!impl_->http.bind_to_port(host, port)) {
    throw Error("cannot bind to " + host + ":" + std::to_string(port));
  }
  return port;
}

void EvalServer::serve() { impl_->http.listen_after_bind(); }

void EvalServer::stop() {
  if (impl_ && impl_->http.is_running()) impl_->http.stop();
}

}  // namespace h2ke::evalserve
