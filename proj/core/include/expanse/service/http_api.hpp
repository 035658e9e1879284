#pragma once

#include "expanse/error.hpp"
#include "expanse/service/session.hpp"

#include <memory>
#include <string>
#include <thread>

namespace expanse {

/// HTTP status for an error code: 400 invalid input, 404 not found, 409
/// invalid state or capped session, 422 content policy, 502 upstream
/// transport, 500 otherwise.
int http_status_for(ErrorCode code);

/// JSON API over a SessionService:
///   POST /sessions                     {user_id, mode, scenario_id?}    201
///   GET  /sessions/{id}                                                 200
///   POST /sessions/{id}/prompts        {prompt}                         202 + poll URL
///   GET  /sessions/{id}/rounds/{k}                                      200
///   POST /sessions/{id}/feedback       {satisfaction, most_preferred?, least_preferred?}
///   POST /sessions/{id}/finalize       {favorite_image, final_satisfaction}
///   GET  /images/{content_hash}        image bytes
///   GET  /scenarios                    built-in scenario fixtures
/// Errors are {"error": {"code", "message"}}.
class HttpServer {
 public:
  explicit HttpServer(SessionService& service);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Requires bind().
  void run();
  /// run() on a background thread.
  void start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
};

}  // namespace expanse
