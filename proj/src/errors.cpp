#include "mismeasure/errors.hpp"

namespace mismeasure {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kNoConvergence: return "NoConvergence";
    case ErrorCode::kSeparationSuspected: return "SeparationSuspected";
    case ErrorCode::kNonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::kInvalidPropensity: return "InvalidPropensity";
    case ErrorCode::kDegenerateValidation: return "DegenerateValidation";
    case ErrorCode::kNonIdentifiable: return "NonIdentifiable";
    case ErrorCode::kMissingGoldOutcomes: return "MissingGoldOutcomes";
    case ErrorCode::kEmptyValidationArm: return "EmptyValidationArm";
    case ErrorCode::kEmptyComplement: return "EmptyComplement";
    case ErrorCode::kEmptyArm: return "EmptyArm";
    case ErrorCode::kWeightOutOfRange: return "WeightOutOfRange";
    case ErrorCode::kDegenerateVariance: return "DegenerateVariance";
    case ErrorCode::kNegativeVariance: return "NegativeVariance";
    case ErrorCode::kResidualCheckFailed: return "ResidualCheckFailed";
    case ErrorCode::kCalibrationFailed: return "CalibrationFailed";
    case ErrorCode::kTooManyFailures: return "TooManyFailures";
    case ErrorCode::kInvalidFrame: return "InvalidFrame";
    case ErrorCode::kUnknownScenario: return "UnknownScenario";
    case ErrorCode::kConfigParseError: return "ConfigParseError";
    case ErrorCode::kSchemaError: return "SchemaError";
  }
  return "Unknown";
}

bool is_recoverable(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kInvalidFrame:
    case ErrorCode::kUnknownScenario:
    case ErrorCode::kConfigParseError:
    case ErrorCode::kSchemaError:
    case ErrorCode::kWeightOutOfRange:
    case ErrorCode::kTooManyFailures:
    case ErrorCode::kCalibrationFailed:
      return false;
    default:
      return true;
  }
}

}  // namespace mismeasure
