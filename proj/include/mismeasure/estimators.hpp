#ifndef MISMEASURE_ESTIMATORS_HPP_
#define MISMEASURE_ESTIMATORS_HPP_

// Point estimators of the average treatment effect for a binary outcome
// observed with misclassification (silver, Y*) everywhere and without error
// (gold, Y) on a validation subsample that may be selected non-randomly.
//
// Propensities are inputs: e_i = P(T=1 | X) and pi_V,i = P(V=1 | T, X) are
// fitted by the caller, so the same code serves simulations and real data.

#include <array>
#include <optional>
#include <string_view>

#include "mismeasure/frame.hpp"

namespace mismeasure {

enum class EstimatorId {
  kOracle,           // IPW on the full gold outcome (simulation only)
  kNaive,            // IPW on the silver outcome
  kValOnly,          // IPW on the validation sample, no selection weights
  kNonvalCorrected,  // corrected IPW on the non-validated rows
  kSyCombined,       // size-weighted combination of the two above
  kSValOnly,         // selection-weighted IPW on the validation sample
  kSNonval,          // corrected Hajek IPW on the non-validated rows
  kSCombined,        // size-weighted combination of the two above
  kAllSilver,        // corrected Hajek IPW on every silver outcome
  kSWeighted,        // b * kSValOnly + (1 - b) * kAllSilver
  kSOpt,             // kSWeighted at the variance-minimising b
};

inline constexpr std::array<EstimatorId, 11> kAllEstimators = {
    EstimatorId::kOracle,     EstimatorId::kNaive,     EstimatorId::kValOnly,
    EstimatorId::kNonvalCorrected, EstimatorId::kSyCombined, EstimatorId::kSValOnly,
    EstimatorId::kSNonval,    EstimatorId::kSCombined, EstimatorId::kAllSilver,
    EstimatorId::kSWeighted,  EstimatorId::kSOpt,
};

// Identifier used in configs, CSV and JSON ("s_opt", ...).
std::string_view to_string(EstimatorId id);
// Human-readable label for tables ("tau^S_opt(Y_V,Y*)", ...).
std::string_view display_label(EstimatorId id);
std::optional<EstimatorId> parse_estimator_id(std::string_view name);

inline constexpr double kIdentifiabilityTolerance = 1e-6;

// p11 = P(Y*=1 | Y=1) (sensitivity), p10 = P(Y*=1 | Y=0).
struct MisclassRates {
  double p11 = 1.0;
  double p10 = 0.0;

  double difference() const { return p11 - p10; }
  // Throws kNonIdentifiable when |p11 - p10| < 1e-6.
  void check_identifiable() const;
};

struct AteEstimate {
  EstimatorId id = EstimatorId::kOracle;
  double tau = 0.0;
  std::optional<double> se;
  std::optional<double> ci_low;
  std::optional<double> ci_high;
  std::optional<double> weight_used;  // w or b
};

// Validation-sample estimates of (p11, p10).
MisclassRates estimate_misclassification(const ObservationFrame& frame);

// Difference of normalised weighted means,
// sum(w1 y) / sum(w1) - sum(w0 y) / sum(w0). Throws kEmptyArm when either
// weight total is zero.
double hajek_contrast(const Eigen::VectorXd& w1, const Eigen::VectorXd& w0,
                      const Eigen::VectorXd& outcome);

AteEstimate tau_oracle(const ObservationFrame& frame, const PropensityPair& props);
AteEstimate tau_naive(const ObservationFrame& frame, const PropensityPair& props);
AteEstimate tau_val_only(const ObservationFrame& frame, const PropensityPair& props);
AteEstimate tau_nonval_corrected(const ObservationFrame& frame, const PropensityPair& props,
                                 const MisclassRates& rates);
AteEstimate tau_sy_combined(const ObservationFrame& frame, const PropensityPair& props,
                            const MisclassRates& rates, double w = 0.5);

// lambda = w n_V / (w n_V + (1 - w)(n - n_V)).
double sy_lambda(double w, double n_validated, double n);

AteEstimate tau_s_val_only(const ObservationFrame& frame, const PropensityPair& props);
// Hajek contrast of Y* over the non-validated rows with weights
// 1 / (e (1 - pi_V)) and 1 / ((1 - e)(1 - pi_V)), before correction.
double s_nonval_raw(const ObservationFrame& frame, const PropensityPair& props);
AteEstimate tau_s_nonval(const ObservationFrame& frame, const PropensityPair& props,
                         const MisclassRates& rates);
AteEstimate tau_s_combined(const ObservationFrame& frame, const PropensityPair& props,
                           const MisclassRates& rates);
AteEstimate tau_all_silver(const ObservationFrame& frame, const PropensityPair& props,
                           const MisclassRates& rates);
AteEstimate tau_s_weighted(const ObservationFrame& frame, const PropensityPair& props,
                           const MisclassRates& rates, double b = 0.5);

struct OptimalWeight {
  double b = 0.5;
  bool degenerate = false;  // denominator below 1e-14, b fell back to 0.5
  bool clipped = false;
};

inline constexpr double kDegenerateVarianceTolerance = 1e-14;

// b minimising Var(b A + (1 - b) B), clipped to [0, 1].
OptimalWeight compute_b_opt(double var_a, double var_b, double cov_ab);

}  // namespace mismeasure

#endif  // MISMEASURE_ESTIMATORS_HPP_
