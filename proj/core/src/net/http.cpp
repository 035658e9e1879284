#include "expanse/net/http.hpp"

#include "expanse/error.hpp"

#include <httplib.h>

#include <atomic>

namespace expanse {
namespace {

std::atomic<std::uint64_t> g_requests{0};

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) fail(ErrorCode::config, "URL must be absolute: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

httplib::Headers to_headers(const HttpOptions& o) {
  httplib::Headers h;
  for (const auto& [k, v] : o.headers) h.emplace(k, v);
  return h;
}

HttpResponse finish(const std::string& url, const httplib::Result& res) {
  if (!res) {
    fail(ErrorCode::transport, "request to " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 429 || res->status >= 500) {
    fail(ErrorCode::transport, "request to " + url + " returned HTTP " + std::to_string(res->status));
  }
  return {res->status, res->body, res->get_header_value("Content-Type")};
}

void configure(httplib::Client& cli, const HttpOptions& o) {
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(o.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(o.timeout - secs);
  cli.set_connection_timeout(secs.count(), usecs.count());
  cli.set_read_timeout(secs.count(), usecs.count());
  cli.set_write_timeout(secs.count(), usecs.count());
}

}  // namespace

HttpResponse http_post_json(const std::string& url, const nlohmann::json& body,
                            const HttpOptions& options) {
  const auto [origin, path] = split_url(url);
  httplib::Client cli(origin);
  configure(cli, options);
  g_requests.fetch_add(1, std::memory_order_relaxed);
  return finish(url, cli.Post(path, to_headers(options), body.dump(), "application/json"));
}

HttpResponse http_get(const std::string& url, const HttpOptions& options) {
  const auto [origin, path] = split_url(url);
  httplib::Client cli(origin);
  configure(cli, options);
  g_requests.fetch_add(1, std::memory_order_relaxed);
  return finish(url, cli.Get(path, to_headers(options)));
}

std::uint64_t network_requests() noexcept { return g_requests.load(); }

}  // namespace expanse
