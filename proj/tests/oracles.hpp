#ifndef MISMEASURE_TESTS_ORACLES_HPP_
#define MISMEASURE_TESTS_ORACLES_HPP_

// Independent reference implementations for the tests. Everything here is
// plain loops over std::vector so it shares no code path with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mismeasure/frame.hpp"

namespace oracle {

using Vec = std::vector<double>;

struct Row {
  double t, y, ystar, v, e, pi;
};

inline std::vector<Row> rows_of(const mismeasure::ObservationFrame& f, const Vec& e,
                                const Vec& pi) {
  std::vector<Row> rows;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    rows.push_back({f.t[i], f.y[i], f.y_star[i], f.v[i], e[i], pi.empty() ? 0.5 : pi[i]});
  }
  return rows;
}

struct Rates {
  double p11, p10;
};

inline Rates rates(const std::vector<Row>& rows) {
  double pos = 0, neg = 0, tp = 0, fp = 0;
  for (const Row& r : rows) {
    if (r.v != 1) continue;
    if (r.y == 1) {
      pos += 1;
      if (r.ystar == 1) tp += 1;
    } else {
      neg += 1;
      if (r.ystar == 1) fp += 1;
    }
  }
  return {tp / pos, fp / neg};
}

inline double oracle(const std::vector<Row>& rows) {
  double s = 0;
  for (const Row& r : rows) {
    if (r.t == 1) s += r.y / r.e;
    else s -= r.y / (1 - r.e);
  }
  return s / static_cast<double>(rows.size());
}

inline double naive(const std::vector<Row>& rows) {
  double s = 0;
  for (const Row& r : rows) {
    if (r.t == 1) s += r.ystar / r.e;
    else s -= r.ystar / (1 - r.e);
  }
  return s / static_cast<double>(rows.size());
}

inline double val_only(const std::vector<Row>& rows) {
  double s = 0, nv = 0;
  for (const Row& r : rows) {
    if (r.v != 1) continue;
    nv += 1;
    if (r.t == 1) s += r.y / r.e;
    else s -= r.y / (1 - r.e);
  }
  return s / nv;
}

inline double nonval_corrected(const std::vector<Row>& rows, Rates q) {
  double s = 0, nc = 0;
  for (const Row& r : rows) {
    if (r.v != 0) continue;
    nc += 1;
    if (r.t == 1) s += r.ystar / r.e;
    else s -= r.ystar / (1 - r.e);
  }
  return s / nc / (q.p11 - q.p10);
}

inline double sy_combined(const std::vector<Row>& rows, Rates q, double w) {
  double nv = 0;
  for (const Row& r : rows) nv += r.v;
  const double n = static_cast<double>(rows.size());
  const double lambda = w * nv / (w * nv + (1 - w) * (n - nv));
  return lambda * val_only(rows) + (1 - lambda) * nonval_corrected(rows, q);
}

inline double s_val_only(const std::vector<Row>& rows) {
  double s = 0;
  for (const Row& r : rows) {
    if (r.v != 1) continue;
    if (r.t == 1) s += r.y / (r.e * r.pi);
    else s -= r.y / ((1 - r.e) * r.pi);
  }
  return s / static_cast<double>(rows.size());
}

inline double s_nonval(const std::vector<Row>& rows, Rates q) {
  double n1 = 0, d1 = 0, n0 = 0, d0 = 0;
  for (const Row& r : rows) {
    if (r.v != 0) continue;
    if (r.t == 1) {
      const double w = 1 / (r.e * (1 - r.pi));
      n1 += w * r.ystar;
      d1 += w;
    } else {
      const double w = 1 / ((1 - r.e) * (1 - r.pi));
      n0 += w * r.ystar;
      d0 += w;
    }
  }
  return (n1 / d1 - n0 / d0) / (q.p11 - q.p10);
}

inline double s_combined(const std::vector<Row>& rows, Rates q) {
  double nv = 0;
  for (const Row& r : rows) nv += r.v;
  const double n = static_cast<double>(rows.size());
  return nv / n * s_val_only(rows) + (n - nv) / n * s_nonval(rows, q);
}

inline double all_silver(const std::vector<Row>& rows, Rates q) {
  double n1 = 0, d1 = 0, n0 = 0, d0 = 0;
  for (const Row& r : rows) {
    if (r.t == 1) {
      n1 += r.ystar / r.e;
      d1 += 1 / r.e;
    } else {
      n0 += r.ystar / (1 - r.e);
      d0 += 1 / (1 - r.e);
    }
  }
  return (n1 / d1 - n0 / d0) / (q.p11 - q.p10);
}

inline double s_weighted(const std::vector<Row>& rows, Rates q, double b) {
  return b * s_val_only(rows) + (1 - b) * all_silver(rows, q);
}

inline double b_opt(double va, double vb, double cab) {
  const double den = va + vb - 2 * cab;
  if (den < 1e-14) return 0.5;
  return std::min(1.0, std::max(0.0, (vb - cab) / den));
}

// Newton-Raphson for logistic regression on row-major data, with its own
// Gaussian elimination. Returns the coefficient vector.
inline Vec logistic_newton(const std::vector<Vec>& x, const Vec& y, const Vec& w = {}) {
  const std::size_t n = x.size();
  const std::size_t p = x[0].size();
  Vec beta(p, 0.0);
  for (int iter = 0; iter < 100; ++iter) {
    Vec g(p, 0.0);
    std::vector<Vec> h(p, Vec(p, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0;
      for (std::size_t j = 0; j < p; ++j) eta += x[i][j] * beta[j];
      const double mu = 1 / (1 + std::exp(-eta));
      const double wi = w.empty() ? 1.0 : w[i];
      for (std::size_t j = 0; j < p; ++j) {
        g[j] += wi * (y[i] - mu) * x[i][j];
        for (std::size_t k = 0; k < p; ++k) h[j][k] += wi * mu * (1 - mu) * x[i][j] * x[i][k];
      }
    }
    // solve h d = g with partial pivoting
    for (std::size_t c = 0; c < p; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < p; ++r) {
        if (std::abs(h[r][c]) > std::abs(h[piv][c])) piv = r;
      }
      std::swap(h[c], h[piv]);
      std::swap(g[c], g[piv]);
      for (std::size_t r = c + 1; r < p; ++r) {
        const double f = h[r][c] / h[c][c];
        for (std::size_t k = c; k < p; ++k) h[r][k] -= f * h[c][k];
        g[r] -= f * g[c];
      }
    }
    Vec d(p, 0.0);
    for (std::size_t c = p; c-- > 0;) {
      double s = g[c];
      for (std::size_t k = c + 1; k < p; ++k) s -= h[c][k] * d[k];
      d[c] = s / h[c][c];
    }
    double step = 0;
    for (std::size_t j = 0; j < p; ++j) {
      beta[j] += d[j];
      step = std::max(step, std::abs(d[j]));
    }
    if (step < 1e-13) break;
  }
  return beta;
}

// Random frames for property tests. Every frame has both arms and both gold
// classes among validated rows, both arms among non-validated rows, and
// p11 != p10, so all eleven estimators are defined.
class FrameGenerator {
 public:
  explicit FrameGenerator(std::uint64_t seed) : gen_(seed) {}

  struct Case {
    mismeasure::ObservationFrame frame;
    Vec e, pi;
  };

  double unif(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(gen_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(gen_); }
  double coin(double p = 0.5) { return unif(0, 1) < p ? 1.0 : 0.0; }

  Case next(int min_n = 8, int max_n = 12) {
    for (;;) {
      const int n = integer(min_n, max_n);
      const int p = integer(1, 3);
      Case c;
      auto& f = c.frame;
      f.x.resize(n, p);
      f.t.resize(n);
      f.y.resize(n);
      f.y_star.resize(n);
      f.v.resize(n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) f.x(i, j) = unif(-2, 2);
        f.t[i] = coin();
        f.y[i] = coin(0.4);
        f.y_star[i] = coin(0.5);
        f.v[i] = coin(0.5);
        c.e.push_back(unif(0.1, 0.9));
        c.pi.push_back(unif(0.1, 0.9));
      }
      if (!usable(c)) continue;
      for (int i = 0; i < n; ++i) {
        if (f.v[i] == 0) f.y[i] = mismeasure::kMissing;
      }
      return c;
    }
  }

 private:
  static bool usable(const Case& c) {
    const auto& f = c.frame;
    int vt1 = 0, vt0 = 0, ct1 = 0, ct0 = 0, pos = 0, neg = 0;
    double tp = 0, fp = 0;
    for (Eigen::Index i = 0; i < f.size(); ++i) {
      if (f.v[i] == 1) {
        (f.t[i] == 1 ? vt1 : vt0)++;
        if (f.y[i] == 1) {
          ++pos;
          tp += f.y_star[i];
        } else {
          ++neg;
          fp += f.y_star[i];
        }
      } else {
        (f.t[i] == 1 ? ct1 : ct0)++;
      }
    }
    if (!(vt1 && vt0 && ct1 && ct0 && pos && neg)) return false;
    return std::abs(tp / pos - fp / neg) > 0.05;
  }

  std::mt19937_64 gen_;
};

inline Eigen::VectorXd to_eigen(const Vec& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline bool close(double a, double b, double tol) {
  return std::abs(a - b) <= tol * std::max(1.0, std::abs(b));
}

}  // namespace oracle

#endif  // MISMEASURE_TESTS_ORACLES_HPP_
