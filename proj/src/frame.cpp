#include "mismeasure/frame.hpp"

#include <string>

#include "mismeasure/errors.hpp"

namespace mismeasure {
namespace {

bool is_binary(double value) { return value == 0.0 || value == 1.0; }

void check_shapes(const ObservationFrame& f) {
  const Eigen::Index n = f.size();
  if (f.x.rows() != n || f.y_star.size() != n || f.v.size() != n || f.y.size() != n) {
    throw Error(ErrorCode::kInvalidFrame, "frame vectors have inconsistent lengths");
  }
  if (!f.x.allFinite()) {
    throw Error(ErrorCode::kInvalidFrame, "covariates must be finite");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_binary(f.t[i]) || !is_binary(f.y_star[i]) || !is_binary(f.v[i])) {
      throw Error(ErrorCode::kInvalidFrame,
                  "row " + std::to_string(i) + ": t, y_star and v must be 0/1");
    }
    if (f.has_gold(i) && !is_binary(f.y[i])) {
      throw Error(ErrorCode::kInvalidFrame, "row " + std::to_string(i) + ": y must be 0/1");
    }
  }
}

}  // namespace

Eigen::Index ObservationFrame::n_validated() const {
  return static_cast<Eigen::Index>(v.sum());
}

void ObservationFrame::validate() const {
  check_shapes(*this);
  for (Eigen::Index i = 0; i < size(); ++i) {
    if (has_gold(i) != (v[i] == 1.0)) {
      throw Error(ErrorCode::kInvalidFrame,
                  "row " + std::to_string(i) + ": gold outcome must be present iff v = 1");
    }
  }
}

void ObservationFrame::validate_complete() const {
  check_shapes(*this);
  for (Eigen::Index i = 0; i < size(); ++i) {
    if (!has_gold(i)) {
      throw Error(ErrorCode::kMissingGoldOutcomes,
                  "row " + std::to_string(i) + " has no gold outcome");
    }
  }
}

}  // namespace mismeasure
