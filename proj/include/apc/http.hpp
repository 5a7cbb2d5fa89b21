#pragma once

#include <memory>
#include <string>

#include "apc/service.hpp"

namespace apc {

// Binds the /v1 routes of a Service to an HTTP listener.
class HttpServer {
 public:
  explicit HttpServer(Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Returns the bound port; port 0 picks a free one. Throws Io on failure.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called.
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace apc
