#ifndef MISMEASURE_ERRORS_HPP_
#define MISMEASURE_ERRORS_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace mismeasure {

enum class ErrorCode {
  kDimensionMismatch,
  kSingularSystem,
  kNoConvergence,
  kSeparationSuspected,
  kNonFiniteEvaluation,
  kInvalidPropensity,
  kDegenerateValidation,
  kNonIdentifiable,
  kMissingGoldOutcomes,
  kEmptyValidationArm,
  kEmptyComplement,
  kEmptyArm,
  kWeightOutOfRange,
  kDegenerateVariance,
  kNegativeVariance,
  kResidualCheckFailed,
  kCalibrationFailed,
  kTooManyFailures,
  kInvalidFrame,
  kUnknownScenario,
  kConfigParseError,
  kSchemaError,
};

std::string_view to_string(ErrorCode code);

// Whether an error is a data-dependent failure a Monte Carlo iteration may
// record and skip, as opposed to a programming or configuration error.
bool is_recoverable(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mismeasure

#endif  // MISMEASURE_ERRORS_HPP_
