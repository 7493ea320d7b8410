#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ipscope {

enum class ErrorCode {
  parse,
  unsupported_target,
  invalid_argument,
  io,
  format,
  dataset_not_loaded,
  unknown_dataset,
  fetch,
  resolve,
  consent_required,
  connect,
  referral_loop,
  empty_response,
  provider_unavailable,
  feature_mismatch,
  store_unavailable,
  serialization,
  unknown_port_set,
  conflict,
  offline,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <ErrorCode C>
class CodedError : public Error {
 public:
  explicit CodedError(const std::string& what) : Error(C, what) {}
};

using ParseError = CodedError<ErrorCode::parse>;
using UnsupportedTarget = CodedError<ErrorCode::unsupported_target>;
using InvalidArgument = CodedError<ErrorCode::invalid_argument>;
using IoError = CodedError<ErrorCode::io>;
using FormatError = CodedError<ErrorCode::format>;
using DatasetNotLoaded = CodedError<ErrorCode::dataset_not_loaded>;
using UnknownDataset = CodedError<ErrorCode::unknown_dataset>;
using FetchError = CodedError<ErrorCode::fetch>;
using ResolveError = CodedError<ErrorCode::resolve>;
using ConsentRequired = CodedError<ErrorCode::consent_required>;
using ConnectError = CodedError<ErrorCode::connect>;
using EmptyResponse = CodedError<ErrorCode::empty_response>;
using FeatureMismatch = CodedError<ErrorCode::feature_mismatch>;
using StoreUnavailable = CodedError<ErrorCode::store_unavailable>;
using SerializationError = CodedError<ErrorCode::serialization>;
using UnknownPortSet = CodedError<ErrorCode::unknown_port_set>;
using Conflict = CodedError<ErrorCode::conflict>;
// Raised when an outbound network operation is attempted while offline.
using OfflineViolation = CodedError<ErrorCode::offline>;

}  // namespace ipscope
