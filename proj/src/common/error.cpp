#include "uq/common/error.hpp"

namespace uq {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension error";
    case ErrorCode::kNumericInput: return "numeric-input error";
    case ErrorCode::kLabel: return "label error";
    case ErrorCode::kDivergence: return "training-divergence error";
    case ErrorCode::kToken: return "token error";
    case ErrorCode::kLength: return "length error";
    case ErrorCode::kIndex: return "index error";
    case ErrorCode::kDomain: return "domain error";
    case ErrorCode::kAnnotation: return "annotation error";
    case ErrorCode::kDegenerateData: return "degenerate-data error";
    case ErrorCode::kClaim: return "claim error";
    case ErrorCode::kCompatibility: return "compatibility error";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kMetric: return "metric error";
    case ErrorCode::kCoverage: return "coverage error";
    case ErrorCode::kStageDependency: return "stage-dependency error";
    case ErrorCode::kStaleness: return "staleness error";
    case ErrorCode::kIo: return "io error";
    case ErrorCode::kFormat: return "format error";
  }
  return "error";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

int Error::exit_code() const noexcept {
  switch (code_) {
    case ErrorCode::kConfig: return 1;
    case ErrorCode::kStageDependency:
    case ErrorCode::kStaleness: return 2;
    default: return 3;
  }
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace uq
