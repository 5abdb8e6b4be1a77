#ifndef MISMEASURE_INFERENCE_HPP_
#define MISMEASURE_INFERENCE_HPP_

// Stacked estimating equations and empirical sandwich covariance.
//
// Parameter vector layout, in order:
//   tau_s_val | gamma (treatment model) | eta (selection model) | alpha | beta
//   | p11 | p10 | gamma_s (full-sample weighted system only)
// beta is on the corrected scale: the regression slope equals (p11 - p10) beta.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <utility>

#include "mismeasure/estimators.hpp"
#include "mismeasure/frame.hpp"

namespace mismeasure {

enum class SystemKind {
  // Hajek/WLS rows weighted by R_i over the non-validated rows.
  kComplementWeighted,
  // Hajek/WLS rows weighted by D_i over every row, plus gamma_s.
  kFullSampleWeighted,
  // Horvitz-Thompson complement rows with an intercept-only selection
  // model; carries the size-weighted combination of validation and
  // non-validation IPW estimates.
  kComplementUnweighted,
};

enum class TreatmentScoreVariant {
  // (T - expit(gamma X)) X
  kStandard,
  // (T - expit(gamma X)) expit(eta X~) X; gamma is then fit by ML weighted
  // by the fitted selection propensities so the row still has mean zero.
  kPrinted,
};

// Design matrices (intercept columns included) for the two propensity models.
struct ModelDesigns {
  Eigen::MatrixXd treatment;
  Eigen::MatrixXd selection;
};

// treatment = (1, X), selection = (1, T, X).
ModelDesigns default_designs(const ObservationFrame& frame);
Eigen::MatrixXd intercept_only(Eigen::Index n);

struct StackedParams {
  double tau_s_val = 0.0;
  Eigen::VectorXd gamma;
  Eigen::VectorXd eta;
  double alpha = 0.0;
  double beta = 0.0;
  double p11 = 0.0;
  double p10 = 0.0;
  std::optional<Eigen::VectorXd> gamma_s;

  Eigen::Index size() const;
  Eigen::VectorXd pack() const;

  Eigen::Index tau_index() const { return 0; }
  Eigen::Index gamma_offset() const { return 1; }
  Eigen::Index eta_offset() const { return 1 + gamma.size(); }
  Eigen::Index alpha_index() const { return eta_offset() + eta.size(); }
  Eigen::Index beta_index() const { return alpha_index() + 1; }
  Eigen::Index p11_index() const { return alpha_index() + 2; }
  Eigen::Index p10_index() const { return alpha_index() + 3; }
  Eigen::Index gamma_s_offset() const { return alpha_index() + 4; }
};

// R_i = (1-V)T / (e(1-pi)) + (1-V)(1-T) / ((1-e)(1-pi)); zero when V = 1.
double weight_r(double v, double t, double e, double pi_v);
// D_i = T / e + (1-T) / (1-e).
double weight_d(double t, double e);

class EstimatingSystem {
 public:
  EstimatingSystem(ObservationFrame frame, ModelDesigns designs, SystemKind kind,
                   TreatmentScoreVariant variant = TreatmentScoreVariant::kStandard);

  SystemKind kind() const { return kind_; }
  TreatmentScoreVariant variant() const { return variant_; }
  const ObservationFrame& frame() const { return frame_; }
  const ModelDesigns& designs() const { return designs_; }
  Eigen::Index rows() const { return frame_.size(); }
  Eigen::Index dimension() const;

  // Shape template for packing/unpacking parameter vectors.
  StackedParams unpack(const Eigen::VectorXd& theta) const;

  // phi_i(theta) for subject i.
  Eigen::VectorXd residual(Eigen::Index i, const StackedParams& params) const;
  // n x dimension() matrix whose row i is phi_i(theta).
  Eigen::MatrixXd residuals(const Eigen::VectorXd& theta) const;
  // (1/n) sum_i phi_i(theta).
  Eigen::VectorXd mean_residual(const Eigen::VectorXd& theta) const;

 private:
  ObservationFrame frame_;
  Eigen::VectorXd gold_;  // y with unobserved entries zeroed
  ModelDesigns designs_;
  SystemKind kind_;
  TreatmentScoreVariant variant_;
  double validation_scale_;  // n / n_V
};

// Checks the frame (validated rows carry gold outcomes, both gold classes
// present) and assembles the system. kComplementUnweighted replaces the
// selection design by an intercept column.
EstimatingSystem build_system(const ObservationFrame& frame, const ModelDesigns& designs,
                              SystemKind kind,
                              TreatmentScoreVariant variant = TreatmentScoreVariant::kStandard);

inline constexpr double kResidualTolerance = 1e-6;

// Sequential plug-in solution; verifies max|mean residual| <= 1e-6.
StackedParams solve_plugin(const EstimatingSystem& system);

struct SandwichResult {
  StackedParams theta_hat;
  Eigen::MatrixXd covariance;  // already divided by n
  Eigen::VectorXd se;
};

using ResidualMatrixFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

// A^-1 B A^-T / n with A = -d/dtheta mean(phi) by central differences and
// B = mean(phi phi^T). Symmetrised.
Eigen::MatrixXd sandwich_covariance(const ResidualMatrixFn& residuals,
                                    const Eigen::VectorXd& theta);

SandwichResult sandwich(const EstimatingSystem& system, const StackedParams& theta_hat);

struct DeltaResult {
  double point = 0.0;
  double se = 0.0;
};

// point = c_a theta_a + c_b theta_b with the matching first-order SE.
DeltaResult combine_delta(const SandwichResult& result, double c_a, Eigen::Index index_a,
                          double c_b, Eigen::Index index_b);

inline constexpr double kZ975 = 1.9599639845400545;

std::pair<double, double> confidence_interval(double point, double se, double level = 0.95);

// IPW estimate with its own treatment model, stacked as
// (T y / e - (1-T) y / (1-e) - tau ; (T - e) X).
struct IpwInference {
  double tau = 0.0;
  double se = 0.0;
  Eigen::VectorXd gamma;
};

IpwInference ipw_with_sandwich(const Eigen::VectorXd& t, const Eigen::VectorXd& outcome,
                               const Eigen::MatrixXd& treatment_design);

}  // namespace mismeasure

#endif  // MISMEASURE_INFERENCE_HPP_
