#include "expanse/service/http_api.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/util/binary_io.hpp"

#include <httplib.h>

namespace expanse {
namespace {

using json = nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  send_json(res, status, {{"error", {{"code", std::string(code)}, {"message", message}}}});
}

json body_of(const httplib::Request& req) {
  json j;
  try {
    j = json::parse(req.body.empty() ? std::string("{}") : req.body);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("request body is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorCode::invalid_input, "request body must be a JSON object");
  return j;
}

template <typename T>
T field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) fail(ErrorCode::invalid_input, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::invalid_input, std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
std::optional<T> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return field<T>(j, key);
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".png") return "image/png";
  if (ext == ".jpg") return "image/jpeg";
  if (ext == ".ppm") return "image/x-portable-pixmap";
  return "application/octet-stream";
}

// Wraps a handler so every thrown error becomes a JSON error response.
template <typename F>
httplib::Server::Handler guarded(F fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const Error& e) {
      send_error(res, http_status_for(e.code()), to_string(e.code()), e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input:
      return 400;
    case ErrorCode::not_found:
      return 404;
    case ErrorCode::invalid_state:
    case ErrorCode::session_capped:
      return 409;
    case ErrorCode::policy:
      return 422;
    case ErrorCode::transport:
      return 502;
    default:
      return 500;
  }
}

struct HttpServer::Impl {
  explicit Impl(SessionService& s) : service(s) {}
  SessionService& service;
  httplib::Server server;
};

HttpServer::HttpServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svc = impl_->service;
  auto& srv = impl_->server;

  srv.Post("/sessions", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const json b = body_of(req);
    const Session s = svc.create_session(field<std::string>(b, "user_id"), field<std::string>(b, "mode"),
                                         optional_field<std::string>(b, "scenario_id"));
    res.set_header("Location", "/sessions/" + s.session_id);
    send_json(res, 201, s);
  }));

  srv.Get(R"(/sessions/([^/]+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, svc.get(req.matches[1]));
  }));

  srv.Post(R"(/sessions/([^/]+)/prompts)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    const Round r = svc.submit_prompt(id, field<std::string>(body_of(req), "prompt"));
    const std::string poll = "/sessions/" + id + "/rounds/" + std::to_string(r.round_index);
    res.set_header("Location", poll);
    send_json(res, 202, {{"round", r}, {"poll", poll}});
  }));

  srv.Get(R"(/sessions/([^/]+)/rounds/(\d+))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    int k = 0;
    try {
      k = std::stoi(req.matches[2]);
    } catch (const std::exception&) {
      fail(ErrorCode::not_found, "round index out of range");
    }
    send_json(res, 200, svc.get_round(req.matches[1], k));
  }));

  srv.Post(R"(/sessions/([^/]+)/feedback)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const json b = body_of(req);
    send_json(res, 200,
              svc.submit_feedback(req.matches[1], field<int>(b, "satisfaction"),
                                  optional_field<std::string>(b, "most_preferred"),
                                  optional_field<std::string>(b, "least_preferred")));
  }));

  srv.Post(R"(/sessions/([^/]+)/finalize)", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const json b = body_of(req);
    send_json(res, 200,
              svc.finalize_session(req.matches[1], field<std::string>(b, "favorite_image"),
                                   field<double>(b, "final_satisfaction")));
  }));

  srv.Get(R"(/images/([0-9a-f]{64}))", guarded([&svc](const httplib::Request& req, httplib::Response& res) {
    const auto path = svc.image_path(req.matches[1]);
    if (!path) fail(ErrorCode::not_found, "no image " + std::string(req.matches[1]));
    const auto bytes = read_binary_file(*path);
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), content_type_for(*path));
  }));

  srv.Get("/scenarios", guarded([](const httplib::Request&, httplib::Response& res) {
    json out = json::array();
    for (const auto& s : scenarios()) {
      out.push_back({{"id", s.id}, {"title", s.title}, {"background", s.background},
                     {"initial_prompt", s.initial_prompt}});
    }
    send_json(res, 200, out);
  }));

  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send_error(res, res.status, res.status == 404 ? "not_found" : "http_error",
                 "HTTP " + std::to_string(res.status));
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) fail(ErrorCode::io, "cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::run() {
  if (!impl_->server.listen_after_bind()) fail(ErrorCode::io, "server stopped with an error");
}

void HttpServer::start() {
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace expanse
