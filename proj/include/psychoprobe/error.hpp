#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace psychoprobe {

enum class ErrorCode {
  kMalformedFile,
  kDuplicateItemIndex,
  kEmptySubscale,
  kRangeInvalid,
  kOutOfRange,
  kAllMissing,
  kNotEnoughPersonas,
  kNotEnoughRows,
  kSchemaMismatch,
  kInvalidFieldValue,
  kItemInstrumentMismatch,
  kInvalidInput,
  kEndpointUnreachable,
  kAuthMissing,
  kCacheCorrupt,
  kUnknownItem,
  kJobMismatch,
  kEmptyInput,
  kTooFewRows,
  kTooFewItems,
  kTooFewPairs,
  kZeroTotalVariance,
  kNotPsdInput,
  kNoConvergence,
  kFitFailed,
  kNotConverged,
  kNonPositiveDefinite,
  kSpecInvalid,
  kSingularHessian,
  kBaselineFitFailed,
  kAlignmentMismatch,
  kDegenerateSample,
  kConfigInvalid,
  kRunMismatch,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace psychoprobe
