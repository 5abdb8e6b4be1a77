#ifndef MISMEASURE_NUMERICS_HPP_
#define MISMEASURE_NUMERICS_HPP_

// Dense numerical building blocks shared by the estimators, the stacked
// estimating equations and the simulation harness. Everything here is
// templated on the scalar type and header-only; the library itself only
// instantiates double.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "mismeasure/errors.hpp"

namespace mismeasure {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Probabilities used as inverse weights are kept inside [floor, 1 - floor].
inline constexpr double kProbabilityFloor = 1e-12;

inline constexpr double kScoreTolerance = 1e-8;
inline constexpr double kStepTolerance = 1e-10;
inline constexpr int kMaxNewtonIterations = 100;
inline constexpr int kMaxStepHalvings = 10;
inline constexpr double kSeparationThreshold = 30.0;
inline constexpr double kRelativePivotTolerance = 1e-12;

template <typename Scalar>
  requires std::is_arithmetic_v<Scalar>
Scalar expit(Scalar u) {
  using std::exp;
  if (u >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + exp(-u));
  }
  const Scalar z = exp(u);
  return z / (Scalar(1) + z);
}

template <typename Scalar>
  requires std::is_arithmetic_v<Scalar>
Scalar logit(Scalar p) {
  using std::log;
  return log(p / (Scalar(1) - p));
}

template <typename Scalar>
  requires std::is_arithmetic_v<Scalar>
Scalar clamp_probability(Scalar p) {
  return std::clamp(p, Scalar(kProbabilityFloor), Scalar(1 - kProbabilityFloor));
}

// Elementwise expit of a linear predictor.
template <typename Derived>
VectorX<typename Derived::Scalar> expit(const Eigen::MatrixBase<Derived>& u) {
  using Scalar = typename Derived::Scalar;
  return u.unaryExpr([](Scalar v) { return expit<Scalar>(v); });
}

template <typename Scalar>
struct LogisticFit {
  VectorX<Scalar> coefficients;
  bool converged = false;
  int iterations = 0;
  Scalar max_abs_score = std::numeric_limits<Scalar>::infinity();
  Scalar log_likelihood = -std::numeric_limits<Scalar>::infinity();
};

// Raised when Newton iterations exhaust their budget; carries the last
// iterate so callers can inspect it.
template <typename Scalar>
class LogisticFitError : public Error {
 public:
  LogisticFitError(ErrorCode code, const std::string& what,
                   LogisticFit<Scalar> fit)
      : Error(code, what), fit_(std::move(fit)) {}

  const LogisticFit<Scalar>& fit() const noexcept { return fit_; }

 private:
  LogisticFit<Scalar> fit_;
};

// X with aX = b by partially pivoted LU. A pivot smaller than
// 1e-12 * max|a| is treated as singular.
template <typename DerivedA, typename DerivedB>
MatrixX<typename DerivedA::Scalar> solve_linear(
    const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.rows() != a.cols() || a.rows() != b.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "solve_linear: incompatible shapes");
  }
  if (a.size() == 0) return MatrixX<Scalar>(0, b.cols());
  const Scalar scale = a.cwiseAbs().maxCoeff();
  if (!(scale > Scalar(0)) || !std::isfinite(static_cast<double>(scale))) {
    throw Error(ErrorCode::kSingularSystem, "solve_linear: zero or non-finite matrix");
  }
  const Eigen::PartialPivLU<MatrixX<Scalar>> lu(a.eval());
  const Scalar min_pivot = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  if (!(min_pivot >= Scalar(kRelativePivotTolerance) * scale)) {
    std::ostringstream msg;
    msg << "pivot " << min_pivot << " below " << kRelativePivotTolerance << " * "
        << scale;
    throw Error(ErrorCode::kSingularSystem, msg.str());
  }
  return lu.solve(b.eval());
}

// Sum_i w_i (y_i - expit(x_i beta)) x_i.
template <typename Scalar>
VectorX<Scalar> logistic_score(const MatrixX<Scalar>& x, const VectorX<Scalar>& y,
                               const VectorX<Scalar>& beta,
                               const VectorX<Scalar>* weights = nullptr) {
  VectorX<Scalar> resid = y - expit(x * beta);
  if (weights) resid.array() *= weights->array();
  return x.transpose() * resid;
}

// Sum_i w_i p_i (1 - p_i) x_i x_i^T, the negative Hessian of the
// log-likelihood.
template <typename Scalar>
MatrixX<Scalar> logistic_information(const MatrixX<Scalar>& x,
                                     const VectorX<Scalar>& beta,
                                     const VectorX<Scalar>* weights = nullptr) {
  const VectorX<Scalar> p = expit(x * beta);
  VectorX<Scalar> v = p.array() * (Scalar(1) - p.array());
  if (weights) v.array() *= weights->array();
  return x.transpose() * v.asDiagonal() * x;
}

template <typename Scalar>
Scalar logistic_log_likelihood(const MatrixX<Scalar>& x, const VectorX<Scalar>& y,
                               const VectorX<Scalar>& beta,
                               const VectorX<Scalar>* weights = nullptr) {
  using std::exp;
  using std::log1p;
  const VectorX<Scalar> eta = x * beta;
  Scalar ll = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) without overflow
    const Scalar u = eta[i];
    const Scalar softplus = u > 0 ? u + log1p(exp(-u)) : log1p(exp(u));
    const Scalar term = y[i] * u - softplus;
    ll += weights ? (*weights)[i] * term : term;
  }
  return ll;
}

// Maximum (weighted) Bernoulli likelihood by Newton-Raphson with step
// halving. Converged when max|score| <= 1e-8 or max|step| <= 1e-10.
template <typename Scalar>
LogisticFit<Scalar> fit_logistic(const MatrixX<Scalar>& x, const VectorX<Scalar>& y,
                                 const std::optional<VectorX<Scalar>>& weights = {}) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (y.size() != n || (weights && weights->size() != n)) {
    throw Error(ErrorCode::kDimensionMismatch, "fit_logistic: length mismatch");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] != Scalar(0) && y[i] != Scalar(1)) {
      throw Error(ErrorCode::kInvalidFrame, "fit_logistic: response must be 0/1");
    }
    if (weights && (!std::isfinite(static_cast<double>((*weights)[i])) ||
                    (*weights)[i] < Scalar(0))) {
      throw Error(ErrorCode::kInvalidFrame, "fit_logistic: weights must be finite and >= 0");
    }
  }
  if (!x.allFinite()) {
    throw Error(ErrorCode::kInvalidFrame, "fit_logistic: design has non-finite values");
  }
  const VectorX<Scalar>* w = weights ? &*weights : nullptr;

  LogisticFit<Scalar> fit;
  fit.coefficients = VectorX<Scalar>::Zero(p);
  fit.log_likelihood = logistic_log_likelihood(x, y, fit.coefficients, w);
  VectorX<Scalar> score = logistic_score(x, y, fit.coefficients, w);
  fit.max_abs_score = p > 0 ? score.cwiseAbs().maxCoeff() : Scalar(0);

  for (int iter = 1; iter <= kMaxNewtonIterations; ++iter) {
    fit.iterations = iter;
    if (fit.max_abs_score <= Scalar(kScoreTolerance)) {
      fit.converged = true;
      fit.iterations = iter - 1;
      return fit;
    }
    const MatrixX<Scalar> info = logistic_information(x, fit.coefficients, w);
    VectorX<Scalar> step = solve_linear(info, score);

    VectorX<Scalar> candidate = fit.coefficients + step;
    Scalar ll = logistic_log_likelihood(x, y, candidate, w);
    // Near the optimum the likelihood gain drops below rounding noise, so a
    // loss at that level does not trigger halving.
    using std::abs;
    const Scalar slack = Scalar(64) * std::numeric_limits<Scalar>::epsilon() *
                         (Scalar(1) + abs(fit.log_likelihood));
    for (int h = 0; h < kMaxStepHalvings && !(ll >= fit.log_likelihood - slack); ++h) {
      step /= Scalar(2);
      candidate = fit.coefficients + step;
      ll = logistic_log_likelihood(x, y, candidate, w);
    }
    fit.coefficients = candidate;
    fit.log_likelihood = ll;
    score = logistic_score(x, y, fit.coefficients, w);
    fit.max_abs_score = score.cwiseAbs().maxCoeff();
    if (!fit.coefficients.allFinite()) break;
    if (fit.max_abs_score <= Scalar(kScoreTolerance) ||
        step.cwiseAbs().maxCoeff() <= Scalar(kStepTolerance)) {
      fit.converged = true;
      return fit;
    }
  }

  std::ostringstream msg;
  msg << "no convergence after " << fit.iterations << " iterations (max|score| = "
      << fit.max_abs_score << ")";
  if (fit.coefficients.size() > 0 &&
      !(fit.coefficients.cwiseAbs().maxCoeff() <= Scalar(kSeparationThreshold))) {
    throw LogisticFitError<Scalar>(ErrorCode::kSeparationSuspected, msg.str(), fit);
  }
  throw LogisticFitError<Scalar>(ErrorCode::kNoConvergence, msg.str(), fit);
}

// Clamped expit(x * coefficients).
template <typename Scalar>
VectorX<Scalar> predict_proba(const LogisticFit<Scalar>& fit, const MatrixX<Scalar>& x) {
  if (x.cols() != fit.coefficients.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "predict_proba: column count mismatch");
  }
  return expit(x * fit.coefficients).unaryExpr([](Scalar v) { return clamp_probability(v); });
}

// Central-difference Jacobian, J(i, j) = d f_i / d theta_j. The default step
// for coordinate j is 1e-6 * max(1, |theta_j|).
template <typename Scalar>
MatrixX<Scalar> numeric_jacobian(
    const std::function<VectorX<Scalar>(const VectorX<Scalar>&)>& f,
    const VectorX<Scalar>& theta, std::optional<Scalar> step = {}) {
  using std::abs;
  const VectorX<Scalar> f0 = f(theta);
  if (!f0.allFinite()) {
    throw Error(ErrorCode::kNonFiniteEvaluation, "numeric_jacobian: f(theta) not finite");
  }
  MatrixX<Scalar> jac(f0.size(), theta.size());
  VectorX<Scalar> probe = theta;
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const Scalar h = step ? *step : Scalar(1e-6) * std::max(Scalar(1), abs(theta[j]));
    probe[j] = theta[j] + h;
    const VectorX<Scalar> up = f(probe);
    probe[j] = theta[j] - h;
    const VectorX<Scalar> down = f(probe);
    probe[j] = theta[j];
    if (!up.allFinite() || !down.allFinite()) {
      throw Error(ErrorCode::kNonFiniteEvaluation,
                  "numeric_jacobian: non-finite value at perturbed point " +
                      std::to_string(j));
    }
    if (up.size() != f0.size() || down.size() != f0.size()) {
      throw Error(ErrorCode::kDimensionMismatch, "numeric_jacobian: output size changed");
    }
    jac.col(j) = (up - down) / (Scalar(2) * h);
  }
  return jac;
}

// Standard normal quantile. Acklam's rational approximation, polished with
// one Halley step against erfc.
template <typename Scalar>
Scalar normal_quantile(Scalar p) {
  using std::exp;
  using std::log;
  using std::sqrt;
  if (!(p > Scalar(0) && p < Scalar(1))) {
    throw std::invalid_argument("normal_quantile: p must lie in (0,1)");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549671010029133e+00,
                                 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  const double q_low = 0.02425;
  const double pd = static_cast<double>(p);
  double x;
  if (pd < q_low) {
    const double q = std::sqrt(-2 * std::log(pd));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  } else if (pd <= 1 - q_low) {
    const double q = pd - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
  } else {
    const double q = std::sqrt(-2 * std::log(1 - pd));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
  }
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - pd;
  const double u = e * std::sqrt(2 * M_PI) * std::exp(x * x / 2);
  x = x - u / (1 + x * u / 2);
  return Scalar(x);
}

}  // namespace mismeasure

#endif  // MISMEASURE_NUMERICS_HPP_
