#include "mismeasure/inference.hpp"

#include <cmath>
#include <sstream>
#include <string>

#include "mismeasure/errors.hpp"
#include "mismeasure/numerics.hpp"

namespace mismeasure {
namespace {

using Eigen::ArrayXd;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

ArrayXd fitted_probability(const MatrixXd& design, const VectorXd& coef) {
  return expit(VectorXd(design * coef)).unaryExpr([](double p) { return clamp_probability(p); })
      .array();
}

VectorXd closed_form_intercept(const VectorXd& v) {
  const double rate = v.mean();
  if (!(rate > 0.0 && rate < 1.0)) {
    throw Error(ErrorCode::kEmptyComplement,
                "intercept-only selection model needs both validated and non-validated rows");
  }
  return VectorXd::Constant(1, logit(rate));
}

bool is_intercept_only(const MatrixXd& design) {
  return design.cols() == 1 && (design.array() == 1.0).all();
}

}  // namespace

ModelDesigns default_designs(const ObservationFrame& frame) {
  const Index n = frame.size();
  const Index p = frame.covariates();
  ModelDesigns d;
  d.treatment.resize(n, p + 1);
  d.treatment.col(0).setOnes();
  d.treatment.rightCols(p) = frame.x;
  d.selection.resize(n, p + 2);
  d.selection.col(0).setOnes();
  d.selection.col(1) = frame.t;
  d.selection.rightCols(p) = frame.x;
  return d;
}

MatrixXd intercept_only(Index n) { return MatrixXd::Ones(n, 1); }

Index StackedParams::size() const {
  return 1 + gamma.size() + eta.size() + 4 + (gamma_s ? gamma_s->size() : 0);
}

VectorXd StackedParams::pack() const {
  VectorXd theta(size());
  theta[tau_index()] = tau_s_val;
  theta.segment(gamma_offset(), gamma.size()) = gamma;
  theta.segment(eta_offset(), eta.size()) = eta;
  theta[alpha_index()] = alpha;
  theta[beta_index()] = beta;
  theta[p11_index()] = p11;
  theta[p10_index()] = p10;
  if (gamma_s) theta.segment(gamma_s_offset(), gamma_s->size()) = *gamma_s;
  return theta;
}

double weight_r(double v, double t, double e, double pi_v) {
  if (!(e > 0.0 && e < 1.0) || !(pi_v > 0.0 && pi_v < 1.0)) {
    throw Error(ErrorCode::kInvalidPropensity, "weight_r: propensities must lie in (0,1)");
  }
  return (1.0 - v) * t / (e * (1.0 - pi_v)) + (1.0 - v) * (1.0 - t) / ((1.0 - e) * (1.0 - pi_v));
}

double weight_d(double t, double e) {
  if (!(e > 0.0 && e < 1.0)) {
    throw Error(ErrorCode::kInvalidPropensity, "weight_d: propensity must lie in (0,1)");
  }
  return t / e + (1.0 - t) / (1.0 - e);
}

EstimatingSystem::EstimatingSystem(ObservationFrame frame, ModelDesigns designs, SystemKind kind,
                                   TreatmentScoreVariant variant)
    : frame_(std::move(frame)), designs_(std::move(designs)), kind_(kind), variant_(variant) {
  if (designs_.treatment.rows() != frame_.size() || designs_.selection.rows() != frame_.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "design rows differ from frame rows");
  }
  gold_ = frame_.y.unaryExpr([](double y) { return std::isnan(y) ? 0.0 : y; });
  const double n_v = frame_.v.sum();
  validation_scale_ = n_v > 0 ? static_cast<double>(frame_.size()) / n_v : 0.0;
}

Index EstimatingSystem::dimension() const {
  const Index q = designs_.treatment.cols();
  const Index r = designs_.selection.cols();
  return 1 + q + r + 4 + (kind_ == SystemKind::kFullSampleWeighted ? q : 0);
}

StackedParams EstimatingSystem::unpack(const VectorXd& theta) const {
  if (theta.size() != dimension()) {
    throw Error(ErrorCode::kDimensionMismatch, "parameter vector has the wrong length");
  }
  StackedParams p;
  p.gamma.resize(designs_.treatment.cols());
  p.eta.resize(designs_.selection.cols());
  if (kind_ == SystemKind::kFullSampleWeighted) p.gamma_s = VectorXd(designs_.treatment.cols());
  p.tau_s_val = theta[p.tau_index()];
  p.gamma = theta.segment(p.gamma_offset(), p.gamma.size());
  p.eta = theta.segment(p.eta_offset(), p.eta.size());
  p.alpha = theta[p.alpha_index()];
  p.beta = theta[p.beta_index()];
  p.p11 = theta[p.p11_index()];
  p.p10 = theta[p.p10_index()];
  if (p.gamma_s) *p.gamma_s = theta.segment(p.gamma_s_offset(), p.gamma_s->size());
  return p;
}

MatrixXd EstimatingSystem::residuals(const VectorXd& theta) const {
  const StackedParams p = unpack(theta);
  const Index n = rows();
  const MatrixXd& xt = designs_.treatment;
  const MatrixXd& xs = designs_.selection;

  const ArrayXd t = frame_.t.array();
  const ArrayXd v = frame_.v.array();
  const ArrayXd ys = frame_.y_star.array();
  const ArrayXd y = gold_.array();
  const ArrayXd e = fitted_probability(xt, p.gamma);
  const ArrayXd pi = fitted_probability(xs, p.eta);
  const double slope = (p.p11 - p.p10) * p.beta;

  MatrixXd phi(n, dimension());
  phi.col(p.tau_index()) =
      (v * (t * y / (e * pi) - (1.0 - t) * y / ((1.0 - e) * pi)) - p.tau_s_val).matrix();

  ArrayXd treat_resid = t - e;
  if (variant_ == TreatmentScoreVariant::kPrinted) treat_resid *= pi;
  phi.middleCols(p.gamma_offset(), p.gamma.size()) = treat_resid.matrix().asDiagonal() * xt;
  phi.middleCols(p.eta_offset(), p.eta.size()) = (v - pi).matrix().asDiagonal() * xs;

  switch (kind_) {
    case SystemKind::kComplementWeighted: {
      const ArrayXd w =
          (1.0 - v) * (t / (e * (1.0 - pi)) + (1.0 - t) / ((1.0 - e) * (1.0 - pi)));
      const ArrayXd r = ys - p.alpha - slope * t;
      phi.col(p.alpha_index()) = (w * r).matrix();
      phi.col(p.beta_index()) = (w * t * r).matrix();
      break;
    }
    case SystemKind::kFullSampleWeighted: {
      const ArrayXd es = fitted_probability(xt, *p.gamma_s);
      const ArrayXd w = t / es + (1.0 - t) / (1.0 - es);
      const ArrayXd r = ys - p.alpha - slope * t;
      phi.col(p.alpha_index()) = (w * r).matrix();
      phi.col(p.beta_index()) = (w * t * r).matrix();
      phi.middleCols(p.gamma_s_offset(), p.gamma_s->size()) =
          (t - es).matrix().asDiagonal() * xt;
      break;
    }
    case SystemKind::kComplementUnweighted: {
      const ArrayXd keep = (1.0 - v) / (1.0 - pi);
      phi.col(p.alpha_index()) = (keep * (1.0 - t) * ys / (1.0 - e) - p.alpha).matrix();
      phi.col(p.beta_index()) = (keep * t * ys / e - p.alpha - slope).matrix();
      break;
    }
  }

  phi.col(p.p11_index()) = ((y * ys - p.p11 * y) * v * validation_scale_).matrix();
  phi.col(p.p10_index()) =
      (((1.0 - y) * ys - p.p10 * (1.0 - y)) * v * validation_scale_).matrix();
  return phi;
}

VectorXd EstimatingSystem::residual(Index i, const StackedParams& params) const {
  if (i < 0 || i >= rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "row index out of range");
  }
  return residuals(params.pack()).row(i).transpose();
}

VectorXd EstimatingSystem::mean_residual(const VectorXd& theta) const {
  return residuals(theta).colwise().mean().transpose();
}

EstimatingSystem build_system(const ObservationFrame& frame, const ModelDesigns& designs,
                              SystemKind kind, TreatmentScoreVariant variant) {
  frame.validate();
  double gold_pos = 0, gold_neg = 0;
  for (Index i = 0; i < frame.size(); ++i) {
    if (frame.v[i] != 1.0) continue;
    gold_pos += frame.y[i];
    gold_neg += 1.0 - frame.y[i];
  }
  if (gold_pos == 0.0 || gold_neg == 0.0) {
    throw Error(ErrorCode::kDegenerateValidation,
                "validation sample needs both gold positives and gold negatives");
  }
  ModelDesigns d = designs;
  if (kind == SystemKind::kComplementUnweighted) d.selection = intercept_only(frame.size());
  return EstimatingSystem(frame, std::move(d), kind, variant);
}

StackedParams solve_plugin(const EstimatingSystem& system) {
  const ObservationFrame& frame = system.frame();
  const ModelDesigns& designs = system.designs();
  const Index n = frame.size();

  StackedParams p;
  const MisclassRates rates = estimate_misclassification(frame);
  p.p11 = rates.p11;
  p.p10 = rates.p10;

  p.eta = is_intercept_only(designs.selection)
              ? closed_form_intercept(frame.v)
              : fit_logistic<double>(designs.selection, frame.v).coefficients;
  const VectorXd pi = predict_proba(LogisticFit<double>{p.eta}, designs.selection);

  const VectorXd gamma_ml = fit_logistic<double>(designs.treatment, frame.t).coefficients;
  if (system.variant() == TreatmentScoreVariant::kPrinted) {
    p.gamma = fit_logistic<double>(designs.treatment, frame.t, pi).coefficients;
  } else {
    p.gamma = gamma_ml;
  }
  const VectorXd e = predict_proba(LogisticFit<double>{p.gamma}, designs.treatment);
  const PropensityPair props{e, pi};

  p.tau_s_val = tau_s_val_only(frame, props).tau;

  const ArrayXd t = frame.t.array();
  const ArrayXd v = frame.v.array();
  const ArrayXd ys = frame.y_star.array();
  switch (system.kind()) {
    case SystemKind::kComplementWeighted:
    case SystemKind::kFullSampleWeighted: {
      ArrayXd w;
      if (system.kind() == SystemKind::kComplementWeighted) {
        const ArrayXd keep = 1.0 - pi.array();
        w = (1.0 - v) * (t / (e.array() * keep) + (1.0 - t) / ((1.0 - e.array()) * keep));
      } else {
        p.gamma_s = gamma_ml;
        const ArrayXd es = predict_proba(LogisticFit<double>{gamma_ml}, designs.treatment).array();
        w = t / es + (1.0 - t) / (1.0 - es);
      }
      // WLS of Y* on (1, T): intercept is the control mean, slope the contrast.
      const double w1 = (w * t).sum();
      const double w0 = (w * (1.0 - t)).sum();
      if (w1 == 0.0 || w0 == 0.0) {
        throw Error(ErrorCode::kEmptyArm, "weighted least squares arm has zero weight");
      }
      p.alpha = (w * (1.0 - t) * ys).sum() / w0;
      const double slope = (w * t * ys).sum() / w1 - p.alpha;
      p.beta = slope / rates.difference();
      break;
    }
    case SystemKind::kComplementUnweighted: {
      const ArrayXd keep = (1.0 - v) / (1.0 - pi.array());
      if ((1.0 - v).sum() == 0.0) {
        throw Error(ErrorCode::kEmptyComplement, "every row is validated");
      }
      p.alpha = (keep * (1.0 - t) * ys / (1.0 - e.array())).sum() / static_cast<double>(n);
      const double treated = (keep * t * ys / e.array()).sum() / static_cast<double>(n);
      p.beta = (treated - p.alpha) / rates.difference();
      break;
    }
  }

  const VectorXd resid = system.mean_residual(p.pack());
  const double worst = resid.cwiseAbs().maxCoeff();
  if (!(worst <= kResidualTolerance)) {
    std::ostringstream msg;
    msg << "plug-in solution leaves max|mean residual| = " << worst;
    throw Error(ErrorCode::kResidualCheckFailed, msg.str());
  }
  return p;
}

MatrixXd sandwich_covariance(const ResidualMatrixFn& residuals, const VectorXd& theta) {
  const MatrixXd phi = residuals(theta);
  const double n = static_cast<double>(phi.rows());
  const std::function<VectorXd(const VectorXd&)> mean_fn = [&](const VectorXd& th) {
    return VectorXd(residuals(th).colwise().mean().transpose());
  };
  const MatrixXd bread = -numeric_jacobian<double>(mean_fn, theta);
  const MatrixXd meat = phi.transpose() * phi / n;
  const MatrixXd bread_inv =
      solve_linear(bread, MatrixXd::Identity(bread.rows(), bread.cols()));
  const MatrixXd cov = bread_inv * meat * bread_inv.transpose() / n;
  return (cov + cov.transpose()) / 2.0;
}

SandwichResult sandwich(const EstimatingSystem& system, const StackedParams& theta_hat) {
  SandwichResult out;
  out.theta_hat = theta_hat;
  out.covariance = sandwich_covariance(
      [&system](const VectorXd& th) { return system.residuals(th); }, theta_hat.pack());
  if ((out.covariance.diagonal().array() < 0.0).any()) {
    throw Error(ErrorCode::kNegativeVariance, "sandwich covariance has a negative diagonal");
  }
  out.se = out.covariance.diagonal().cwiseSqrt();
  return out;
}

DeltaResult combine_delta(const SandwichResult& result, double c_a, Index index_a, double c_b,
                          Index index_b) {
  const MatrixXd& cov = result.covariance;
  if (index_a < 0 || index_b < 0 || index_a >= cov.rows() || index_b >= cov.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "combine_delta: index out of range");
  }
  const VectorXd theta = result.theta_hat.pack();
  DeltaResult out;
  out.point = c_a * theta[index_a] + c_b * theta[index_b];
  const double var = c_a * c_a * cov(index_a, index_a) + c_b * c_b * cov(index_b, index_b) +
                     2.0 * c_a * c_b * cov(index_a, index_b);
  if (!(var >= 0.0)) {
    std::ostringstream msg;
    msg << "combined variance " << var << " is negative";
    throw Error(ErrorCode::kNegativeVariance, msg.str());
  }
  out.se = std::sqrt(var);
  return out;
}

std::pair<double, double> confidence_interval(double point, double se, double level) {
  const double z = level == 0.95 ? kZ975 : normal_quantile(1.0 - (1.0 - level) / 2.0);
  return {point - z * se, point + z * se};
}

IpwInference ipw_with_sandwich(const VectorXd& t, const VectorXd& outcome,
                               const MatrixXd& treatment_design) {
  const Index q = treatment_design.cols();
  IpwInference out;
  out.gamma = fit_logistic<double>(treatment_design, t).coefficients;
  const ArrayXd e0 = fitted_probability(treatment_design, out.gamma);
  out.tau = (t.array() * outcome.array() / e0 -
             (1.0 - t.array()) * outcome.array() / (1.0 - e0))
                .mean();

  const auto residuals = [&](const VectorXd& theta) {
    const ArrayXd e = fitted_probability(treatment_design, theta.tail(q));
    MatrixXd phi(t.size(), 1 + q);
    phi.col(0) = (t.array() * outcome.array() / e -
                  (1.0 - t.array()) * outcome.array() / (1.0 - e) - theta[0])
                     .matrix();
    phi.rightCols(q) = (t.array() - e).matrix().asDiagonal() * treatment_design;
    return phi;
  };
  VectorXd theta(1 + q);
  theta << out.tau, out.gamma;
  const MatrixXd cov = sandwich_covariance(residuals, theta);
  if (!(cov(0, 0) >= 0.0)) {
    throw Error(ErrorCode::kNegativeVariance, "IPW sandwich variance is negative");
  }
  out.se = std::sqrt(cov(0, 0));
  return out;
}

}  // namespace mismeasure
