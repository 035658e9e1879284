#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace expanse {

enum class ErrorCode {
  invalid_input,
  invalid_state,
  degenerate_projection,
  numeric,
  io,
  not_found,
  transport,      // retryable: timeouts, rate limits, unreachable backends
  policy,         // content-policy rejection from a remote backend
  schema,         // structured output did not match the expected shape
  expansion_format,
  partial_pool,
  missing_fixture,
  session_capped,
  config,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  bool retryable() const noexcept { return code_ == ErrorCode::transport; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace expanse
