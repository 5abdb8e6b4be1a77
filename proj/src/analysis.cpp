#include "mismeasure/analysis.hpp"

#include <algorithm>

#include "mismeasure/errors.hpp"
#include "mismeasure/numerics.hpp"

namespace mismeasure {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

bool wants(const std::vector<EstimatorId>& ids, std::initializer_list<EstimatorId> any_of) {
  return std::any_of(ids.begin(), ids.end(), [&](EstimatorId id) {
    return std::find(any_of.begin(), any_of.end(), id) != any_of.end();
  });
}

void attach_interval(AteEstimate& est, double se, double level) {
  est.se = se;
  const auto [lo, hi] = confidence_interval(est.tau, se, level);
  est.ci_low = lo;
  est.ci_high = hi;
}

AteEstimate combined(EstimatorId id, double c_a, double a, double c_b, double b) {
  AteEstimate est;
  est.id = id;
  est.tau = (c_a > 0 ? c_a * a : 0.0) + (c_b > 0 ? c_b * b : 0.0);
  return est;
}

VectorXd fit_selection(const MatrixXd& design, const VectorXd& v) {
  if (design.cols() == 1 && (design.array() == 1.0).all()) {
    return VectorXd::Constant(1, logit(v.mean()));
  }
  return fit_logistic<double>(design, v).coefficients;
}

}  // namespace

const AteEstimate* AnalysisResult::find(EstimatorId id) const {
  for (const AteEstimate& est : estimates) {
    if (est.id == id) return &est;
  }
  return nullptr;
}

bool needs_validation(EstimatorId id) {
  return id != EstimatorId::kOracle && id != EstimatorId::kNaive;
}

AnalysisResult analyze(const ObservationFrame& frame, const AnalysisDesigns& designs,
                       const AnalysisOptions& options, const VectorXd* gold_truth) {
  frame.validate();
  if (designs.treatment.rows() != frame.size() || designs.selection.rows() != frame.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "design rows differ from frame rows");
  }

  AnalysisResult result;
  result.n = frame.size();
  result.n_validated = frame.n_validated();

  std::vector<EstimatorId> requested = options.estimators;
  if (result.n_validated == 0 &&
      std::any_of(requested.begin(), requested.end(), needs_validation)) {
    result.warnings.push_back(
        "no validated rows: estimators that need gold outcomes were skipped");
    requested.erase(std::remove_if(requested.begin(), requested.end(), needs_validation),
                    requested.end());
  }

  const VectorXd gamma = fit_logistic<double>(designs.treatment, frame.t).coefficients;
  result.gamma = gamma;
  const VectorXd e = predict_proba(LogisticFit<double>{gamma}, designs.treatment);

  const bool use_c = wants(requested, {EstimatorId::kValOnly, EstimatorId::kNonvalCorrected,
                                       EstimatorId::kSyCombined});
  const bool use_a = wants(requested, {EstimatorId::kSNonval, EstimatorId::kSCombined});
  const bool use_b = wants(requested, {EstimatorId::kSValOnly, EstimatorId::kAllSilver,
                                       EstimatorId::kSWeighted, EstimatorId::kSOpt});

  std::optional<SandwichResult> sw_a, sw_b, sw_c;
  PropensityPair plain{e, {}};
  PropensityPair selected{e, {}};
  if (use_a || use_b || use_c) {
    result.rates = estimate_misclassification(frame);
  }
  if (use_a || use_b) {
    result.eta = fit_selection(designs.selection, frame.v);
    selected.pi_v = predict_proba(LogisticFit<double>{*result.eta}, designs.selection);
    if (options.variant == TreatmentScoreVariant::kPrinted) {
      const VectorXd gamma_w =
          fit_logistic<double>(designs.treatment, frame.t, selected.pi_v).coefficients;
      selected.e = predict_proba(LogisticFit<double>{gamma_w}, designs.treatment);
    }
    plain.pi_v = selected.pi_v;
  }
  const ModelDesigns model{designs.treatment, designs.selection};
  const auto run_system = [&](SystemKind kind) {
    const EstimatingSystem system = build_system(frame, model, kind, options.variant);
    return sandwich(system, solve_plugin(system));
  };
  if (use_a) sw_a = run_system(SystemKind::kComplementWeighted);
  if (use_b) sw_b = run_system(SystemKind::kFullSampleWeighted);
  if (use_c) sw_c = run_system(SystemKind::kComplementUnweighted);

  const double n = static_cast<double>(result.n);
  const double n_v = static_cast<double>(result.n_validated);

  for (EstimatorId id : requested) {
    AteEstimate est;
    switch (id) {
      case EstimatorId::kOracle: {
        if (gold_truth == nullptr) {
          throw Error(ErrorCode::kMissingGoldOutcomes,
                      "the oracle estimator needs the full gold outcome");
        }
        const MatrixXd& xo = designs.oracle_treatment ? *designs.oracle_treatment
                                                      : designs.treatment;
        const IpwInference inf = ipw_with_sandwich(frame.t, *gold_truth, xo);
        ObservationFrame complete = frame;
        complete.y = *gold_truth;
        const VectorXd e_oracle = predict_proba(LogisticFit<double>{inf.gamma}, xo);
        est = tau_oracle(complete, {e_oracle, {}});
        attach_interval(est, inf.se, options.level);
        break;
      }
      case EstimatorId::kNaive: {
        const IpwInference inf = ipw_with_sandwich(frame.t, frame.y_star, designs.treatment);
        est = tau_naive(frame, plain);
        attach_interval(est, inf.se, options.level);
        break;
      }
      case EstimatorId::kValOnly: {
        est = tau_val_only(frame, plain);
        attach_interval(est, sw_c->se[sw_c->theta_hat.tau_index()], options.level);
        break;
      }
      case EstimatorId::kNonvalCorrected: {
        est = tau_nonval_corrected(frame, plain, *result.rates);
        attach_interval(est, sw_c->se[sw_c->theta_hat.beta_index()], options.level);
        break;
      }
      case EstimatorId::kSyCombined: {
        const double lambda = sy_lambda(options.w, n_v, n);
        est = tau_sy_combined(frame, plain, *result.rates, options.w);
        const DeltaResult d = combine_delta(*sw_c, lambda, sw_c->theta_hat.tau_index(),
                                            1.0 - lambda, sw_c->theta_hat.beta_index());
        attach_interval(est, d.se, options.level);
        break;
      }
      case EstimatorId::kSValOnly: {
        est = tau_s_val_only(frame, selected);
        attach_interval(est, sw_b->se[sw_b->theta_hat.tau_index()], options.level);
        break;
      }
      case EstimatorId::kSNonval: {
        est = tau_s_nonval(frame, selected, *result.rates);
        attach_interval(est, sw_a->se[sw_a->theta_hat.beta_index()], options.level);
        break;
      }
      case EstimatorId::kSCombined: {
        est = combined(EstimatorId::kSCombined, n_v / n,
                       n_v > 0 ? tau_s_val_only(frame, selected).tau : 0.0, (n - n_v) / n,
                       n_v < n ? tau_s_nonval(frame, selected, *result.rates).tau : 0.0);
        const DeltaResult d = combine_delta(*sw_a, n_v / n, sw_a->theta_hat.tau_index(),
                                            (n - n_v) / n, sw_a->theta_hat.beta_index());
        attach_interval(est, d.se, options.level);
        break;
      }
      case EstimatorId::kAllSilver: {
        est = tau_all_silver(frame, plain, *result.rates);
        attach_interval(est, sw_b->se[sw_b->theta_hat.beta_index()], options.level);
        break;
      }
      case EstimatorId::kSWeighted:
      case EstimatorId::kSOpt: {
        double b = options.b.value_or(n_v / n);
        if (id == EstimatorId::kSOpt) {
          const auto& cov = sw_b->covariance;
          const Eigen::Index ia = sw_b->theta_hat.tau_index();
          const Eigen::Index ib = sw_b->theta_hat.beta_index();
          result.b_opt = compute_b_opt(cov(ia, ia), cov(ib, ib), cov(ia, ib));
          if (result.b_opt->degenerate) {
            result.warnings.push_back(
                "b_opt denominator is degenerate; fell back to b = 0.5");
          }
          b = result.b_opt->b;
        } else if (!(b >= 0.0 && b <= 1.0)) {
          throw Error(ErrorCode::kWeightOutOfRange, "b must lie in [0,1]");
        }
        est = combined(id, b, b > 0 ? tau_s_val_only(frame, selected).tau : 0.0, 1.0 - b,
                       b < 1 ? tau_all_silver(frame, plain, *result.rates).tau : 0.0);
        est.weight_used = b;
        const DeltaResult d = combine_delta(*sw_b, b, sw_b->theta_hat.tau_index(), 1.0 - b,
                                            sw_b->theta_hat.beta_index());
        attach_interval(est, d.se, options.level);
        break;
      }
    }
    result.estimates.push_back(est);
  }
  return result;
}

}  // namespace mismeasure
