// SPDX-License-Identifier: Apache-2.0
//
// HTTP front end for a StudyStore. JSON bodies, UTF-8.
//
//   POST /studies                                         201 | 400 | 409
//   GET  /studies                                         200
//   GET  /studies/{id}                                    200 | 404
//   GET  /studies/{id}/raters/{rater}/phases/{phase}/next 200 | 404 | 409
//   POST /studies/{id}/raters/{rater}/phases/{phase}/ratings
//        body {case, label[, elapsed_ms]}                 201 | 200 (repeat) | 400 | 404 | 409
//   GET  /studies/{id}/events                             200 | 404
//   GET  /studies/{id}/report[?strict=1]                  200 | 404 | 409
//
// Errors are {"error": <kind>, "message": <text>}.
#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "caninelab/error.hpp"
#include "caninelab/study.hpp"

namespace caninelab::service {

/// HTTP status for a library error raised while serving a request.
int http_status(ErrorKind kind);

class Service {
 public:
  explicit Service(std::filesystem::path studies_dir, std::optional<std::filesystem::path> static_dir = {},
                   study::Clock clock = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds without serving. False when the port is unavailable.
  bool bind(const std::string& host, int port);
  /// Binds an ephemeral port and returns it, or -1.
  int bind_any(const std::string& host);
  /// Serves until stop(). Requires a successful bind.
  void serve();
  void stop();
  bool running() const;

  study::StudyStore& store();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace caninelab::service
