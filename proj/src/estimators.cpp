#include "mismeasure/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mismeasure/errors.hpp"

namespace mismeasure {
namespace {

using Eigen::ArrayXd;
using Eigen::VectorXd;

void require_treatment_propensity(const ObservationFrame& frame, const PropensityPair& props) {
  if (props.e.size() != frame.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "treatment propensity length differs from frame");
  }
  for (Eigen::Index i = 0; i < props.e.size(); ++i) {
    if (!(props.e[i] > 0.0 && props.e[i] < 1.0)) {
      throw Error(ErrorCode::kInvalidPropensity,
                  "e[" + std::to_string(i) + "] outside (0,1)");
    }
  }
}

// pi_V is only consulted on rows whose validation flag equals `flag`.
void require_selection_propensity(const ObservationFrame& frame, const PropensityPair& props,
                                  double flag) {
  if (props.pi_v.size() != frame.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "selection propensity length differs from frame");
  }
  for (Eigen::Index i = 0; i < props.pi_v.size(); ++i) {
    if (frame.v[i] != flag) continue;
    if (!(props.pi_v[i] > 0.0 && props.pi_v[i] < 1.0)) {
      throw Error(ErrorCode::kInvalidPropensity,
                  "pi_v[" + std::to_string(i) + "] outside (0,1)");
    }
  }
}

// Gold outcome with missing entries replaced by zero; only ever multiplied by
// v, so the zeros never contribute.
VectorXd gold_or_zero(const ObservationFrame& frame) {
  return frame.y.unaryExpr([](double y) { return std::isnan(y) ? 0.0 : y; });
}

void require_gold_on_validation(const ObservationFrame& frame) {
  for (Eigen::Index i = 0; i < frame.size(); ++i) {
    if (frame.v[i] == 1.0 && !frame.has_gold(i)) {
      throw Error(ErrorCode::kMissingGoldOutcomes,
                  "validated row " + std::to_string(i) + " has no gold outcome");
    }
  }
}

// (1/n) sum T y / e - (1/n) sum (1 - T) y / (1 - e)
double ipw_difference(const VectorXd& t, const VectorXd& y, const VectorXd& e) {
  const ArrayXd terms =
      t.array() * y.array() / e.array() - (1.0 - t.array()) * y.array() / (1.0 - e.array());
  return terms.mean();
}

AteEstimate make(EstimatorId id, double tau, std::optional<double> weight = {}) {
  AteEstimate est;
  est.id = id;
  est.tau = tau;
  est.weight_used = weight;
  return est;
}

void require_unit_interval(double value, const char* name) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw Error(ErrorCode::kWeightOutOfRange, std::string(name) + " must lie in [0,1]");
  }
}

}  // namespace

std::string_view to_string(EstimatorId id) {
  switch (id) {
    case EstimatorId::kOracle: return "oracle";
    case EstimatorId::kNaive: return "naive";
    case EstimatorId::kValOnly: return "val_only";
    case EstimatorId::kNonvalCorrected: return "nonval_corrected";
    case EstimatorId::kSyCombined: return "sy_combined";
    case EstimatorId::kSValOnly: return "s_val_only";
    case EstimatorId::kSNonval: return "s_nonval";
    case EstimatorId::kSCombined: return "s_combined";
    case EstimatorId::kAllSilver: return "all_silver";
    case EstimatorId::kSWeighted: return "s_weighted";
    case EstimatorId::kSOpt: return "s_opt";
  }
  return "unknown";
}

std::string_view display_label(EstimatorId id) {
  switch (id) {
    case EstimatorId::kOracle: return "tau";
    case EstimatorId::kNaive: return "tau*";
    case EstimatorId::kValOnly: return "tau(Y_V,.)";
    case EstimatorId::kNonvalCorrected: return "tau(.,Y*_Vc)";
    case EstimatorId::kSyCombined: return "tau(Y_V,Y*_Vc)";
    case EstimatorId::kSValOnly: return "tau^S(Y_V,.)";
    case EstimatorId::kSNonval: return "tau^S(.,Y*_Vc)";
    case EstimatorId::kSCombined: return "tau^S(Y_V,Y*_Vc)";
    case EstimatorId::kAllSilver: return "tau(.,Y*)";
    case EstimatorId::kSWeighted: return "tau^S(Y_V,Y*)";
    case EstimatorId::kSOpt: return "tau^S_opt(Y_V,Y*)";
  }
  return "unknown";
}

std::optional<EstimatorId> parse_estimator_id(std::string_view name) {
  for (EstimatorId id : kAllEstimators) {
    if (to_string(id) == name) return id;
  }
  return std::nullopt;
}

void MisclassRates::check_identifiable() const {
  if (!(std::abs(difference()) >= kIdentifiabilityTolerance)) {
    throw Error(ErrorCode::kNonIdentifiable,
                "p11 = " + std::to_string(p11) + " and p10 = " + std::to_string(p10) +
                    " are not distinguishable");
  }
}

MisclassRates estimate_misclassification(const ObservationFrame& frame) {
  double gold_pos = 0, gold_neg = 0, true_pos = 0, false_pos = 0;
  for (Eigen::Index i = 0; i < frame.size(); ++i) {
    if (frame.v[i] != 1.0) continue;
    if (!frame.has_gold(i)) {
      throw Error(ErrorCode::kMissingGoldOutcomes,
                  "validated row " + std::to_string(i) + " has no gold outcome");
    }
    const double y = frame.y[i];
    gold_pos += y;
    gold_neg += 1.0 - y;
    true_pos += y * frame.y_star[i];
    false_pos += (1.0 - y) * frame.y_star[i];
  }
  if (gold_pos == 0.0 || gold_neg == 0.0) {
    throw Error(ErrorCode::kDegenerateValidation,
                "validation sample needs both gold positives and gold negatives");
  }
  MisclassRates rates{true_pos / gold_pos, false_pos / gold_neg};
  rates.check_identifiable();
  return rates;
}

double hajek_contrast(const VectorXd& w1, const VectorXd& w0, const VectorXd& outcome) {
  const double s1 = w1.sum();
  const double s0 = w0.sum();
  if (s1 == 0.0 || s0 == 0.0) {
    throw Error(ErrorCode::kEmptyArm, "Hajek weight total is zero for an arm");
  }
  return w1.dot(outcome) / s1 - w0.dot(outcome) / s0;
}

AteEstimate tau_oracle(const ObservationFrame& frame, const PropensityPair& props) {
  require_treatment_propensity(frame, props);
  for (Eigen::Index i = 0; i < frame.size(); ++i) {
    if (!frame.has_gold(i)) {
      throw Error(ErrorCode::kMissingGoldOutcomes,
                  "oracle estimator needs the gold outcome on row " + std::to_string(i));
    }
  }
  return make(EstimatorId::kOracle, ipw_difference(frame.t, frame.y, props.e));
}

AteEstimate tau_naive(const ObservationFrame& frame, const PropensityPair& props) {
  require_treatment_propensity(frame, props);
  return make(EstimatorId::kNaive, ipw_difference(frame.t, frame.y_star, props.e));
}

AteEstimate tau_val_only(const ObservationFrame& frame, const PropensityPair& props) {
  require_treatment_propensity(frame, props);
  require_gold_on_validation(frame);
  const ArrayXd v = frame.v.array();
  const double n_treated = (v * frame.t.array()).sum();
  const double n_control = (v * (1.0 - frame.t.array())).sum();
  if (n_treated == 0.0 || n_control == 0.0) {
    throw Error(ErrorCode::kEmptyValidationArm, "validation sample lacks a treatment arm");
  }
  const ArrayXd y = gold_or_zero(frame).array();
  const ArrayXd t = frame.t.array();
  const ArrayXd e = props.e.array();
  const double n_v = v.sum();
  const double tau = (v * t * y / e).sum() / n_v - (v * (1.0 - t) * y / (1.0 - e)).sum() / n_v;
  return make(EstimatorId::kValOnly, tau);
}

AteEstimate tau_nonval_corrected(const ObservationFrame& frame, const PropensityPair& props,
                                 const MisclassRates& rates) {
  require_treatment_propensity(frame, props);
  rates.check_identifiable();
  const ArrayXd u = 1.0 - frame.v.array();
  const double n_c = u.sum();
  if (n_c == 0.0) {
    throw Error(ErrorCode::kEmptyComplement, "every row is validated");
  }
  const ArrayXd t = frame.t.array();
  const ArrayXd ys = frame.y_star.array();
  const ArrayXd e = props.e.array();
  const double raw = (u * t * ys / e).sum() / n_c - (u * (1.0 - t) * ys / (1.0 - e)).sum() / n_c;
  return make(EstimatorId::kNonvalCorrected, raw / rates.difference());
}

double sy_lambda(double w, double n_validated, double n) {
  require_unit_interval(w, "w");
  const double num = w * n_validated;
  const double den = num + (1.0 - w) * (n - n_validated);
  if (den == 0.0) {
    throw Error(ErrorCode::kDegenerateVariance, "combination weight has zero denominator");
  }
  return num / den;
}

AteEstimate tau_sy_combined(const ObservationFrame& frame, const PropensityPair& props,
                            const MisclassRates& rates, double w) {
  const double lambda =
      sy_lambda(w, static_cast<double>(frame.n_validated()), static_cast<double>(frame.size()));
  // Endpoint weights skip the component that carries no weight, so w = 1 and
  // w = 0 reproduce their component even when the other is undefined.
  double tau = 0.0;
  if (lambda > 0.0) tau += lambda * tau_val_only(frame, props).tau;
  if (lambda < 1.0) tau += (1.0 - lambda) * tau_nonval_corrected(frame, props, rates).tau;
  return make(EstimatorId::kSyCombined, tau, w);
}

AteEstimate tau_s_val_only(const ObservationFrame& frame, const PropensityPair& props) {
  require_treatment_propensity(frame, props);
  require_selection_propensity(frame, props, 1.0);
  require_gold_on_validation(frame);
  double total = 0.0;
  for (Eigen::Index i = 0; i < frame.size(); ++i) {
    if (frame.v[i] != 1.0) continue;
    const double e = props.e[i];
    const double pi = props.pi_v[i];
    const double t = frame.t[i];
    total += t * frame.y[i] / (e * pi) - (1.0 - t) * frame.y[i] / ((1.0 - e) * pi);
  }
  return make(EstimatorId::kSValOnly, total / static_cast<double>(frame.size()));
}

double s_nonval_raw(const ObservationFrame& frame, const PropensityPair& props) {
  require_treatment_propensity(frame, props);
  require_selection_propensity(frame, props, 0.0);
  VectorXd w1 = VectorXd::Zero(frame.size());
  VectorXd w0 = VectorXd::Zero(frame.size());
  for (Eigen::Index i = 0; i < frame.size(); ++i) {
    if (frame.v[i] != 0.0) continue;
    const double keep = 1.0 - props.pi_v[i];
    w1[i] = frame.t[i] / (props.e[i] * keep);
    w0[i] = (1.0 - frame.t[i]) / ((1.0 - props.e[i]) * keep);
  }
  return hajek_contrast(w1, w0, frame.y_star);
}

AteEstimate tau_s_nonval(const ObservationFrame& frame, const PropensityPair& props,
                         const MisclassRates& rates) {
  rates.check_identifiable();
  return make(EstimatorId::kSNonval, s_nonval_raw(frame, props) / rates.difference());
}

AteEstimate tau_s_combined(const ObservationFrame& frame, const PropensityPair& props,
                           const MisclassRates& rates) {
  const double n = static_cast<double>(frame.size());
  const double n_v = static_cast<double>(frame.n_validated());
  double tau = 0.0;
  if (n_v > 0) tau += (n_v / n) * tau_s_val_only(frame, props).tau;
  if (n_v < n) tau += ((n - n_v) / n) * tau_s_nonval(frame, props, rates).tau;
  return make(EstimatorId::kSCombined, tau);
}

AteEstimate tau_all_silver(const ObservationFrame& frame, const PropensityPair& props,
                           const MisclassRates& rates) {
  require_treatment_propensity(frame, props);
  rates.check_identifiable();
  const ArrayXd t = frame.t.array();
  const ArrayXd e = props.e.array();
  const VectorXd w1 = (t / e).matrix();
  const VectorXd w0 = ((1.0 - t) / (1.0 - e)).matrix();
  return make(EstimatorId::kAllSilver, hajek_contrast(w1, w0, frame.y_star) / rates.difference());
}

AteEstimate tau_s_weighted(const ObservationFrame& frame, const PropensityPair& props,
                           const MisclassRates& rates, double b) {
  require_unit_interval(b, "b");
  double tau = 0.0;
  if (b > 0.0) tau += b * tau_s_val_only(frame, props).tau;
  if (b < 1.0) tau += (1.0 - b) * tau_all_silver(frame, props, rates).tau;
  return make(EstimatorId::kSWeighted, tau, b);
}

OptimalWeight compute_b_opt(double var_a, double var_b, double cov_ab) {
  OptimalWeight out;
  const double den = var_a + var_b - 2.0 * cov_ab;
  if (!(den >= kDegenerateVarianceTolerance)) {
    out.b = 0.5;
    out.degenerate = true;
    return out;
  }
  const double b = (var_b - cov_ab) / den;
  out.b = std::clamp(b, 0.0, 1.0);
  out.clipped = out.b != b;
  return out;
}

}  // namespace mismeasure
