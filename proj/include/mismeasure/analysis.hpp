#ifndef MISMEASURE_ANALYSIS_HPP_
#define MISMEASURE_ANALYSIS_HPP_

// End-to-end analysis of one dataset: fit both propensity models, estimate
// the misclassification rates, evaluate the requested estimators and attach
// sandwich standard errors and confidence intervals. Shared by the
// simulation harness and the `estimate` command so both produce the same
// numbers for the same data.

#include <optional>
#include <string>
#include <vector>

#include "mismeasure/estimators.hpp"
#include "mismeasure/frame.hpp"
#include "mismeasure/inference.hpp"

namespace mismeasure {

struct AnalysisDesigns {
  Eigen::MatrixXd treatment;
  Eigen::MatrixXd selection;
  // Treatment design used by the oracle estimator; defaults to `treatment`.
  std::optional<Eigen::MatrixXd> oracle_treatment;
};

struct AnalysisOptions {
  std::vector<EstimatorId> estimators;
  double w = 0.5;  // weight for the size-weighted combination
  // Weight for tau^S(Y_V,Y*); unset means size-proportional, b = n_V / n,
  // the same convention w = 0.5 yields for the size-weighted combination.
  std::optional<double> b;
  double level = 0.95;
  TreatmentScoreVariant variant = TreatmentScoreVariant::kStandard;
};

struct AnalysisResult {
  std::vector<AteEstimate> estimates;  // in the order requested
  std::optional<MisclassRates> rates;
  Eigen::VectorXd gamma;
  std::optional<Eigen::VectorXd> eta;
  std::optional<OptimalWeight> b_opt;
  Eigen::Index n = 0;
  Eigen::Index n_validated = 0;
  std::vector<std::string> warnings;

  const AteEstimate* find(EstimatorId id) const;
};

bool needs_validation(EstimatorId id);

// `gold_truth`, when given, holds the gold outcome for every row and enables
// the oracle estimator. Estimators that need validated rows are skipped with
// a warning when the frame has none.
AnalysisResult analyze(const ObservationFrame& frame, const AnalysisDesigns& designs,
                       const AnalysisOptions& options,
                       const Eigen::VectorXd* gold_truth = nullptr);

}  // namespace mismeasure

#endif  // MISMEASURE_ANALYSIS_HPP_
