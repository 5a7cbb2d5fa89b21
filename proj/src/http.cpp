#include "apc/http.hpp"

#include <iostream>

#include "apc/error.hpp"
#include "httplib.h"

namespace apc {

struct HttpServer::Impl {
  explicit Impl(Service& s) : service(s) {}

  Service& service;
  httplib::Server server;
};

namespace {

void send(httplib::Response& res, const ApiResponse& api) {
  res.status = api.status;
  res.set_content(api.body.dump(), "application/json");
}

std::optional<std::string_view> bearer(const httplib::Request& req) {
  const auto& auth = req.get_header_value("Authorization");
  constexpr std::string_view prefix = "Bearer ";
  if (auth.size() <= prefix.size() || auth.compare(0, prefix.size(), prefix) != 0)
    return std::nullopt;
  return std::string_view(auth).substr(prefix.size());
}

}  // namespace

HttpServer::HttpServer(Service& service) : impl_(std::make_unique<Impl>(service)) {
  auto& srv = impl_->server;
  auto& svc = impl_->service;

  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers",
                            "Authorization, Content-Type, Idempotency-Key"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Cache-Control", "no-store"}});
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });

  srv.Post("/v1/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> key;
    if (req.has_header("Idempotency-Key")) key = req.get_header_value("Idempotency-Key");
    send(res, svc.create_session(req.body, key, svc.authenticate(bearer(req))));
  });
  srv.Get(R"(/v1/sessions/([^/]+)/trials/next)",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.next_trial(req.matches[1], svc.authenticate(bearer(req))));
          });
  srv.Post(R"(/v1/sessions/([^/]+)/trials/([^/]+)/response)",
           [&svc](const httplib::Request& req, httplib::Response& res) {
             send(res, svc.post_response(req.matches[1], std::string(req.matches[2]), req.body,
                                         svc.authenticate(bearer(req))));
           });
  srv.Get(R"(/v1/sessions/([^/]+)/estimates)",
          [&svc](const httplib::Request& req, httplib::Response& res) {
            send(res, svc.estimates(req.matches[1], svc.authenticate(bearer(req))));
          });
  srv.Get(R"(/v1/sessions/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc.status(req.matches[1], svc.authenticate(bearer(req))));
  });
  srv.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    send(res, {200, {{"status", "ok"}}});
  });

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const auto code = res.status == 404 ? "not-found" : "error";
      send(res, error_response(res.status, code, httplib::status_message(res.status)));
    }
  });
  srv.set_exception_handler(
      [](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "unknown error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        std::cerr << "error: " << req.method << ' ' << req.path << ": " << what << '\n';
        send(res, error_response(500, "internal", what));
      });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int bound = srv.bind_to_any_port(host);
    if (bound < 0) fail(ErrorCode::Io, "cannot bind " + host);
    return bound;
  }
  if (!srv.bind_to_port(host, port))
    fail(ErrorCode::Io, "cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

bool HttpServer::running() const { return impl_->server.is_running(); }

}  // namespace apc
