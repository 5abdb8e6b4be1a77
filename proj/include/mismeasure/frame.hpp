#ifndef MISMEASURE_FRAME_HPP_
#define MISMEASURE_FRAME_HPP_

#include <Eigen/Dense>

#include <cmath>
#include <limits>

namespace mismeasure {

// Marker for a gold outcome that was not observed.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

// One analysis dataset. Vectors are stored as doubles holding 0/1 so they
// can enter weight arithmetic directly; unobserved gold outcomes hold kMissing.
struct ObservationFrame {
  Eigen::MatrixXd x;       // n x p covariates
  Eigen::VectorXd t;       // treatment
  Eigen::VectorXd y_star;  // silver outcome, observed for everyone
  Eigen::VectorXd v;       // validation indicator
  Eigen::VectorXd y;       // gold outcome

  Eigen::Index size() const { return t.size(); }
  Eigen::Index covariates() const { return x.cols(); }
  Eigen::Index n_validated() const;
  bool has_gold(Eigen::Index i) const { return !std::isnan(y[i]); }

  // Shapes, binary coding, and gold present exactly where v = 1.
  // Throws Error(kInvalidFrame).
  void validate() const;
  // Shapes and binary coding, with gold present for every row (simulation
  // frames that still carry the hidden truth).
  void validate_complete() const;
};

// Fitted treatment propensities e_i and validation selection propensities
// pi_V,i. pi_v may be empty for estimators that never touch it.
struct PropensityPair {
  Eigen::VectorXd e;
  Eigen::VectorXd pi_v;
};

}  // namespace mismeasure

#endif  // MISMEASURE_FRAME_HPP_
