#include "ipscope/error.hpp"

namespace ipscope {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::parse: return "parse_error";
    case ErrorCode::unsupported_target: return "unsupported_target";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::io: return "io_error";
    case ErrorCode::format: return "format_error";
    case ErrorCode::dataset_not_loaded: return "dataset_not_loaded";
    case ErrorCode::unknown_dataset: return "unknown_dataset";
    case ErrorCode::fetch: return "fetch_error";
    case ErrorCode::resolve: return "resolve_error";
    case ErrorCode::consent_required: return "consent_required";
    case ErrorCode::connect: return "connect_error";
    case ErrorCode::referral_loop: return "referral_loop";
    case ErrorCode::empty_response: return "empty_response";
    case ErrorCode::provider_unavailable: return "provider_unavailable";
    case ErrorCode::feature_mismatch: return "feature_mismatch";
    case ErrorCode::store_unavailable: return "store_unavailable";
    case ErrorCode::serialization: return "serialization_error";
    case ErrorCode::unknown_port_set: return "unknown_port_set";
    case ErrorCode::conflict: return "conflict";
    case ErrorCode::offline: return "offline";
  }
  return "error";
}

Error::Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}

}  // namespace ipscope
