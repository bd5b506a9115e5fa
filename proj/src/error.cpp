#include "psychoprobe/error.hpp"

namespace psychoprobe {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedFile: return "MalformedFile";
    case ErrorCode::kDuplicateItemIndex: return "DuplicateItemIndex";
    case ErrorCode::kEmptySubscale: return "EmptySubscale";
    case ErrorCode::kRangeInvalid: return "RangeInvalid";
    case ErrorCode::kOutOfRange: return "OutOfRange";
    case ErrorCode::kAllMissing: return "AllMissing";
    case ErrorCode::kNotEnoughPersonas: return "NotEnoughPersonas";
    case ErrorCode::kNotEnoughRows: return "NotEnoughRows";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kInvalidFieldValue: return "InvalidFieldValue";
    case ErrorCode::kItemInstrumentMismatch: return "ItemInstrumentMismatch";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kEndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::kAuthMissing: return "AuthMissing";
    case ErrorCode::kCacheCorrupt: return "CacheCorrupt";
    case ErrorCode::kUnknownItem: return "UnknownItem";
    case ErrorCode::kJobMismatch: return "JobMismatch";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kTooFewRows: return "TooFewRows";
    case ErrorCode::kTooFewItems: return "TooFewItems";
    case ErrorCode::kTooFewPairs: return "TooFewPairs";
    case ErrorCode::kZeroTotalVariance: return "ZeroTotalVariance";
    case ErrorCode::kNotPsdInput: return "NotPSDInput";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kFitFailed: return "FitFailed";
    case ErrorCode::kNotConverged: return "NotConverged";
    case ErrorCode::kNonPositiveDefinite: return "NonPositiveDefinite";
    case ErrorCode::kSpecInvalid: return "SpecInvalid";
    case ErrorCode::kSingularHessian: return "SingularHessian";
    case ErrorCode::kBaselineFitFailed: return "BaselineFitFailed";
    case ErrorCode::kAlignmentMismatch: return "AlignmentMismatch";
    case ErrorCode::kDegenerateSample: return "DegenerateSample";
    case ErrorCode::kConfigInvalid: return "ConfigInvalid";
    case ErrorCode::kRunMismatch: return "RunMismatch";
  }
  return "Unknown";
}

}  // namespace psychoprobe
