#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace synthctl {

// Every failure the library reports carries one of these kinds. The CLI maps
// them onto process exit codes, so values are stable.
enum class ErrorKind {
  kIo = 10,
  kParse = 11,
  kMissingValue = 12,
  kDuplicateUnitId = 13,
  kUnknownTreatedId = 14,
  kBadT0 = 15,
  kRowMismatch = 16,
  kInvalidArgument = 17,
  kEmptyDonorSet = 20,
  kUnknownUnitId = 21,
  kExcludedIsTreated = 22,
  kBadFraction = 23,
  kEmptyGroup = 24,
  kTooFewDonors = 30,
  kSingularSystem = 31,
  kShapeMismatch = 32,
  kZeroActualNorm = 40,
  kInsufficientColumns = 41,
  kAllCandidatesFailed = 42,
  kTooFewUnits = 50,
  kInsufficientDonors = 51,
  kEmptySplit = 52,
  kEmptyControl = 60,
  kConfigInvalid = 61,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace synthctl
