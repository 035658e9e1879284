#include "expanse/error.hpp"

namespace expanse {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid_input";
    case ErrorCode::invalid_state: return "invalid_state";
    case ErrorCode::degenerate_projection: return "degenerate_projection";
    case ErrorCode::numeric: return "numeric";
    case ErrorCode::io: return "io";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::transport: return "transport";
    case ErrorCode::policy: return "policy";
    case ErrorCode::schema: return "schema";
    case ErrorCode::expansion_format: return "expansion_format";
    case ErrorCode::partial_pool: return "partial_pool";
    case ErrorCode::missing_fixture: return "missing_fixture";
    case ErrorCode::session_capped: return "session_capped";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

}  // namespace expanse
