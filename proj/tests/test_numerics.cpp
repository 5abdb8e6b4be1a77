#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mismeasure/numerics.hpp"
#include "oracles.hpp"

using namespace mismeasure;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Design (1, x_1..x_k) with standard normal covariates and a logistic
// response drawn from `beta`.
void logistic_data(std::mt19937_64& gen, int n, const VectorXd& beta, MatrixXd& x, VectorXd& y) {
  std::normal_distribution<double> z;
  std::uniform_real_distribution<double> u;
  x.resize(n, beta.size());
  y.resize(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (Eigen::Index j = 1; j < beta.size(); ++j) x(i, j) = z(gen);
    const double eta = x.row(i).dot(beta);
    y[i] = u(gen) < 1 / (1 + std::exp(-eta)) ? 1.0 : 0.0;
  }
}

std::vector<oracle::Vec> rows_of(const MatrixXd& x) {
  std::vector<oracle::Vec> out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    oracle::Vec row;
    for (Eigen::Index j = 0; j < x.cols(); ++j) row.push_back(x(i, j));
    out.push_back(row);
  }
  return out;
}

}  // namespace

TEST_CASE("expit reference values") {
  CHECK(expit(0.0) == 0.5);
  CHECK(expit(-2.0) == doctest::Approx(0.1192029220221175).epsilon(1e-13));
  CHECK(std::abs(expit(40.0) - 1.0) <= 1e-15);
  CHECK(expit(-800.0) >= 0.0);
  CHECK(std::isfinite(expit(-800.0)));
}

TEST_CASE("expit symmetry and logit inverse over random arguments") {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(-30, 30);
  for (int k = 0; k < 2000; ++k) {
    const double a = u(gen);
    CHECK(expit(a) + expit(-a) == doctest::Approx(1.0).epsilon(1e-15));
    if (std::abs(a) < 15) CHECK(logit(expit(a)) == doctest::Approx(a).epsilon(1e-9));
  }
}

TEST_CASE("vector expit matches scalar expit") {
  const VectorXd u = (VectorXd(4) << -3, 0, 0.5, 7).finished();
  const VectorXd p = expit(u);
  for (int i = 0; i < 4; ++i) CHECK(p[i] == expit(u[i]));
}

TEST_CASE("intercept-only fits have closed forms") {
  const MatrixXd x = MatrixXd::Ones(8, 1);
  const VectorXd y = (VectorXd(8) << 1, 0, 0, 0, 1, 0, 0, 0).finished();
  const auto fit = fit_logistic<double>(x, y);
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(-1.0986122886681098).epsilon(1e-9));

  const VectorXd p = predict_proba(fit, x);
  for (int i = 0; i < 8; ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-9));

  const MatrixXd x2 = MatrixXd::Ones(2, 1);
  const VectorXd y2 = (VectorXd(2) << 0, 1).finished();
  CHECK(std::abs(fit_logistic<double>(x2, y2).coefficients[0]) <= 1e-12);
}

TEST_CASE("predict_proba with zero coefficients is one half") {
  LogisticFit<double> fit;
  fit.coefficients = VectorXd::Zero(3);
  const MatrixXd x = MatrixXd::Random(5, 3);
  CHECK((predict_proba(fit, x).array() == 0.5).all());
}

TEST_CASE("fit agrees with an independent Newton solver") {
  std::mt19937_64 gen(2024);
  VectorXd beta(6);
  beta << 0.8, 0.3, 0.3, 0.3, 0.3, 0.3;
  MatrixXd x;
  VectorXd y;
  logistic_data(gen, 200, beta, x, y);
  const auto fit = fit_logistic<double>(x, y);
  REQUIRE(fit.converged);
  const oracle::Vec ref = oracle::logistic_newton(rows_of(x), {y.data(), y.data() + y.size()});
  for (int j = 0; j < 6; ++j) CHECK(std::abs(fit.coefficients[j] - ref[j]) <= 1e-8);
  CHECK(logistic_score<double>(x, y, fit.coefficients).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("weighted fit equals the fit on replicated rows") {
  std::mt19937_64 gen(5);
  VectorXd beta(3);
  beta << -0.4, 1.0, -0.7;
  MatrixXd x;
  VectorXd y;
  logistic_data(gen, 150, beta, x, y);
  VectorXd w(150);
  std::uniform_int_distribution<int> reps(1, 3);
  Eigen::Index total = 0;
  for (int i = 0; i < 150; ++i) total += static_cast<Eigen::Index>(w[i] = reps(gen));
  MatrixXd xr(total, 3);
  VectorXd yr(total);
  Eigen::Index k = 0;
  for (int i = 0; i < 150; ++i) {
    for (int r = 0; r < static_cast<int>(w[i]); ++r, ++k) {
      xr.row(k) = x.row(i);
      yr[k] = y[i];
    }
  }
  const auto weighted = fit_logistic<double>(x, y, w);
  const auto replicated = fit_logistic<double>(xr, yr);
  CHECK((weighted.coefficients - replicated.coefficients).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("score vanishes at convergence on random problems") {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> z(0, 0.5);
  for (int rep = 0; rep < 25; ++rep) {
    VectorXd beta(4);
    for (int j = 0; j < 4; ++j) beta[j] = z(gen);
    MatrixXd x;
    VectorXd y;
    logistic_data(gen, 300, beta, x, y);
    const auto fit = fit_logistic<double>(x, y);
    REQUIRE(fit.converged);
    CHECK(logistic_score<double>(x, y, fit.coefficients).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("large-sample fit recovers the generating coefficients") {
  std::mt19937_64 gen(9);
  VectorXd beta(6);
  beta << 0.8, 0.3, 0.3, 0.3, 0.3, 0.3;
  MatrixXd x;
  VectorXd y;
  logistic_data(gen, 100000, beta, x, y);
  const auto fit = fit_logistic<double>(x, y);
  const MatrixXd cov = logistic_information<double>(x, fit.coefficients).inverse();
  for (int j = 0; j < 6; ++j) {
    CHECK(std::abs(fit.coefficients[j] - beta[j]) <= 4 * std::sqrt(cov(j, j)));
  }
}

TEST_CASE("fit errors") {
  SUBCASE("collinear design") {
    MatrixXd x(6, 3);
    x.col(0).setOnes();
    x.col(1) << 1, 2, 3, 4, 5, 6;
    x.col(2) = 2 * x.col(1);
    const VectorXd y = (VectorXd(6) << 0, 1, 0, 1, 1, 0).finished();
    CHECK_THROWS_AS(fit_logistic<double>(x, y), Error);
    try {
      fit_logistic<double>(x, y);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSingularSystem);
    }
  }
  SUBCASE("perfectly separated data saturates") {
    // The score decays exponentially along the separating direction, so the
    // score rule stops the iterations with fitted probabilities at 0/1.
    MatrixXd x(4, 2);
    x.col(0).setOnes();
    x.col(1) << -2, -1, 1, 2;
    const VectorXd y = (VectorXd(4) << 0, 0, 1, 1).finished();
    const auto fit = fit_logistic<double>(x, y);
    CHECK(fit.max_abs_score <= kScoreTolerance);
    CHECK(fit.coefficients[1] > 10);
    CHECK((predict_proba(fit, x) - y).cwiseAbs().maxCoeff() <= 1e-8);
  }
  SUBCASE("non-binary response") {
    const MatrixXd x = MatrixXd::Ones(3, 1);
    const VectorXd y = (VectorXd(3) << 0, 2, 1).finished();
    CHECK_THROWS_AS(fit_logistic<double>(x, y), Error);
  }
}

TEST_CASE("numeric jacobian") {
  using Fn = std::function<VectorXd(const VectorXd&)>;
  const VectorXd theta = (VectorXd(3) << 0.5, -1, 2).finished();
  const Fn identity = [](const VectorXd& t) { return t; };
  CHECK((numeric_jacobian(identity, theta) - MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() <=
        1e-9);

  const Fn quad = [](const VectorXd& t) {
    return (VectorXd(2) << t[0] * t[0], t[0] * t[1]).finished();
  };
  const MatrixXd j = numeric_jacobian(quad, (VectorXd(2) << 2, 3).finished());
  MatrixXd expected(2, 2);
  expected << 4, 0, 3, 2;
  CHECK((j - expected).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("jacobian of the logistic score matches the analytic information") {
  std::mt19937_64 gen(31);
  VectorXd beta(4);
  beta << 0.2, -0.5, 0.7, 0.1;
  MatrixXd x;
  VectorXd y;
  logistic_data(gen, 250, beta, x, y);
  const std::function<VectorXd(const VectorXd&)> score = [&](const VectorXd& b) {
    return logistic_score<double>(x, y, b);
  };
  const MatrixXd numeric = numeric_jacobian(score, beta);

  // -d score / d beta = sum p(1-p) x x^T, coded directly
  MatrixXd analytic = MatrixXd::Zero(4, 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double eta = 0;
    for (int k = 0; k < 4; ++k) eta += x(i, k) * beta[k];
    const double p = 1 / (1 + std::exp(-eta));
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) analytic(a, b) += p * (1 - p) * x(i, a) * x(i, b);
    }
  }
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) {
      CHECK(std::abs(-numeric(a, b) - analytic(a, b)) <= 1e-5 * analytic.cwiseAbs().maxCoeff());
    }
  }
}

TEST_CASE("numeric jacobian rejects non-finite evaluations") {
  const std::function<VectorXd(const VectorXd&)> f = [](const VectorXd& t) {
    VectorXd out(1);
    out[0] = t[0] > 0 ? std::log(t[0] - 1e-7) : 0.0;
    return out;
  };
  CHECK_THROWS_AS(numeric_jacobian(f, (VectorXd(1) << 1e-7).finished()), Error);
}

TEST_CASE("solve_linear") {
  const MatrixXd b = MatrixXd::Random(3, 2);
  CHECK((solve_linear(MatrixXd::Identity(3, 3), b) - b).cwiseAbs().maxCoeff() == 0.0);

  MatrixXd a(2, 2);
  a << 2, 0, 0, 4;
  const VectorXd rhs = (VectorXd(2) << 2, 8).finished();
  const MatrixXd sol = solve_linear(a, rhs);
  CHECK(sol(0, 0) == 1.0);
  CHECK(sol(1, 0) == 2.0);

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int rep = 0; rep < 20; ++rep) {
    MatrixXd m(7, 7);
    VectorXd r(7);
    for (int i = 0; i < 7; ++i) {
      r[i] = u(gen);
      for (int j = 0; j < 7; ++j) m(i, j) = u(gen);
    }
    m += 7 * MatrixXd::Identity(7, 7);
    const MatrixXd xs = solve_linear(m, r);
    CHECK((m * xs - r).cwiseAbs().maxCoeff() <= 1e-10);
  }

  MatrixXd singular(2, 2);
  singular << 1, 2, 2, 4;
  CHECK_THROWS_AS(solve_linear(singular, rhs), Error);
  CHECK_THROWS_AS(solve_linear(MatrixXd::Identity(3, 3), rhs), Error);
}

TEST_CASE("normal quantile") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_quantile(0.005) == doctest::Approx(-2.5758293035489).epsilon(1e-10));
  CHECK(normal_quantile(0.1) == doctest::Approx(-normal_quantile(0.9)).epsilon(1e-12));
  CHECK_THROWS(normal_quantile(1.0));
}
