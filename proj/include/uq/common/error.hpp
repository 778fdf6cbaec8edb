#pragma once

#include <stdexcept>
#include <string>

namespace uq {

enum class ErrorCode {
  kDimension,
  kNumericInput,
  kLabel,
  kDivergence,
  kToken,
  kLength,
  kIndex,
  kDomain,
  kAnnotation,
  kDegenerateData,
  kClaim,
  kCompatibility,
  kConfig,
  kMetric,
  kCoverage,
  kStageDependency,
  kStaleness,
  kIo,
  kFormat,
};

const char* error_code_name(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// the CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

  // 1 usage/config, 2 stage dependency, 3 runtime/numeric.
  int exit_code() const noexcept;

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace uq
