#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <map>
#include <string>

namespace expanse {

struct HttpOptions {
  std::chrono::milliseconds timeout{60000};
  std::map<std::string, std::string> headers;
};

struct HttpResponse {
  int status = 0;
  std::string body;
  std::string content_type;
};

/// POSTs a JSON body to an absolute http(s) URL. Connection failures,
/// timeouts, 429 and 5xx raise a retryable transport error; any other status
/// is returned to the caller.
HttpResponse http_post_json(const std::string& url, const nlohmann::json& body,
                            const HttpOptions& options = {});
HttpResponse http_get(const std::string& url, const HttpOptions& options = {});

/// Number of outbound HTTP requests issued by this process. Offline runs
/// assert it stays at zero.
std::uint64_t network_requests() noexcept;

}  // namespace expanse
