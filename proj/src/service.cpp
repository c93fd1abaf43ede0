// SPDX-License-Identifier: Apache-2.0
#include "caninelab/service.hpp"

#include <atomic>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace caninelab::service {

using nlohmann::json;

int http_status(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownStudy:
    case ErrorKind::UnknownRater:
      return 404;
    case ErrorKind::DuplicateStudyId:
    case ErrorKind::ConflictingRating:
    case ErrorKind::OutOfOrderRating:
    case ErrorKind::PhaseNotOpen:
    case ErrorKind::IncompleteStudy:
      return 409;
    case ErrorKind::IoError:
      return 500;
    default:
      return 400;
  }
}

struct Service::Impl {
  study::StudyStore store;
  httplib::Server server;
  std::atomic<bool> bound{false};

  Impl(std::filesystem::path dir, study::Clock clock) : store(std::move(dir), std::move(clock)) {}
};

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump() + "\n", "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message) {
  send_json(res, status, json{{"error", kind}, {"message", message}});
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, http_status(e.kind()), to_string(e.kind()), e.message());
    } catch (const json::exception& e) {
      send_error(res, 400, "ParseError", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "Internal", e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("request body: ") + e.what());
  }
}

}  // namespace

Service::Service(std::filesystem::path studies_dir, std::optional<std::filesystem::path> static_dir,
                 study::Clock clock)
    : impl_(std::make_unique<Impl>(std::move(studies_dir), std::move(clock))) {
  auto& srv = impl_->server;
  auto& store = impl_->store;

  srv.Post("/studies", guarded([&store](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 201, store.create(study::spec_from_json(parse_body(req))));
           }));
  srv.Get("/studies", guarded([&store](const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, json{{"studies", store.list()}});
          }));
  srv.Get(R"(/studies/([^/]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
            send_json(res, 200, store.describe(req.matches[1]));
          }));
  srv.Get(R"(/studies/([^/]+)/raters/([^/]+)/phases/(T0|T1)/next)",
          guarded([&store](const httplib::Request& req, httplib::Response& res) {
            const auto phase = agreement::parse_phase(req.matches[3].str());
            send_json(res, 200, study::to_json(store.next_item(req.matches[1], req.matches[2], phase)));
          }));
  srv.Post(R"(/studies/([^/]+)/raters/([^/]+)/phases/(T0|T1)/ratings)",
           guarded([&store](const httplib::Request& req, httplib::Response& res) {
             const auto body = parse_body(req);
             const auto phase = agreement::parse_phase(req.matches[3].str());
             std::optional<double> elapsed;
             if (body.contains("elapsed_ms") && !body["elapsed_ms"].is_null()) {
               elapsed = body["elapsed_ms"].get<double>();
             }
             const auto outcome = store.record_rating(req.matches[1], req.matches[2], phase,
                                                      body.at("case").get<std::string>(),
                                                      body.at("label").get<std::string>(), elapsed);
             send_json(res, outcome.appended ? 201 : 200, agreement::to_json(outcome.record));
           }));
  srv.Get(R"(/studies/([^/]+)/events)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
            json events = json::array();
            for (const auto& r : store.events(req.matches[1])) events.push_back(agreement::to_json(r));
            send_json(res, 200, json{{"events", events}});
          }));
  srv.Get(R"(/studies/([^/]+)/report)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
            const auto strict = req.get_param_value("strict");
            send_json(res, 200, store.report(req.matches[1], strict == "1" || strict == "true"));
          }));

  // Exclusive binding: a second server on a busy port must fail.
  srv.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  if (static_dir) srv.set_mount_point("/", static_dir->string());
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "NotFound", "no such resource");
  });
}

Service::~Service() { stop(); }

bool Service::bind(const std::string& host, int port) {
  impl_->bound = impl_->server.bind_to_port(host, port);
  return impl_->bound;
}

int Service::bind_any(const std::string& host) {
  const int port = impl_->server.bind_to_any_port(host);
  impl_->bound = port > 0;
  return impl_->bound ? port : -1;
}

void Service::serve() {
  if (!impl_->bound) throw Error(ErrorKind::IoError, "service is not bound to a port");
  impl_->server.listen_after_bind();
}

void Service::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

bool Service::running() const { return impl_->server.is_running(); }

study::StudyStore& Service::store() { return impl_->store; }

}  // namespace caninelab::service
