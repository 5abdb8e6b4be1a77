#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mismeasure/errors.hpp"
#include "mismeasure/inference.hpp"
#include "mismeasure/numerics.hpp"
#include "mismeasure/simulation.hpp"

using namespace mismeasure;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// One n = 5000 draw from the base design with covariate-driven validation.
SimulatedSample simulated(std::uint64_t seed, bool srs = false) {
  Rng rng(seed);
  const DgpConfig dgp = DgpConfig::base();
  const SimulatedPopulation pop = generate_population(dgp, rng);
  const SelectionConfig sel = srs ? SelectionConfig::srs() : SelectionConfig::non_probability();
  return select_validation(pop, sel, srs ? std::nullopt : std::optional<double>(-2.9), rng);
}

PropensityPair fitted_props(const EstimatingSystem& sys, const StackedParams& p) {
  return {expit(VectorXd(sys.designs().treatment * p.gamma)),
          expit(VectorXd(sys.designs().selection * p.eta))};
}

// Logistic ML sandwich I^-1 M I^-1 / n, coded from the closed-form score
// and information.
MatrixXd logistic_sandwich(const MatrixXd& x, const VectorXd& y, const VectorXd& beta) {
  const Eigen::Index n = x.rows(), q = x.cols();
  MatrixXd info = MatrixXd::Zero(q, q), meat = MatrixXd::Zero(q, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double p = 1 / (1 + std::exp(-x.row(i).dot(beta)));
    const VectorXd xi = x.row(i).transpose();
    info += p * (1 - p) * xi * xi.transpose();
    meat += (y[i] - p) * (y[i] - p) * xi * xi.transpose();
  }
  info /= n;
  meat /= n;
  const MatrixXd inv = info.inverse();
  return inv * meat * inv / n;
}

constexpr SystemKind kKinds[] = {SystemKind::kComplementWeighted,
                                 SystemKind::kFullSampleWeighted,
                                 SystemKind::kComplementUnweighted};

}  // namespace

TEST_CASE("row weights") {
  CHECK(weight_r(1, 1, 0.5, 0.5) == 0.0);
  CHECK(weight_r(0, 1, 0.5, 0.5) == 4.0);
  CHECK(weight_r(0, 0, 0.25, 0.2) == doctest::Approx(1.0 / (0.75 * 0.8)).epsilon(1e-15));
  CHECK(weight_d(1, 0.5) == 2.0);
  CHECK(weight_d(0, 0.8) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(weight_d(0, 0.5) == weight_d(1, 0.5));
}

TEST_CASE("plug-in solutions zero the stacked residuals") {
  const SimulatedSample s = simulated(101);
  const ModelDesigns d = default_designs(s.frame);
  for (SystemKind kind : kKinds) {
    for (TreatmentScoreVariant variant :
         {TreatmentScoreVariant::kStandard, TreatmentScoreVariant::kPrinted}) {
      const EstimatingSystem sys = build_system(s.frame, d, kind, variant);
      const StackedParams p = solve_plugin(sys);
      const VectorXd mean = sys.mean_residual(p.pack());
      CHECK(mean.cwiseAbs().maxCoeff() <= kResidualTolerance);
      CHECK(std::abs(mean[p.tau_index()]) <= 1e-12);
      CHECK(std::abs(mean[p.p11_index()]) <= 1e-12);
      CHECK(std::abs(mean[p.p10_index()]) <= 1e-12);
      CHECK(std::abs(mean[p.alpha_index()]) <= 1e-10);
      CHECK(std::abs(mean[p.beta_index()]) <= 1e-10);
      CHECK(sys.residuals(p.pack()).rows() == s.frame.size());
      CHECK(sys.residual(7, p).size() == sys.dimension());
    }
  }
}

TEST_CASE("regression slopes equal the Hajek contrasts") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const SimulatedSample s = simulated(seed);
    const ModelDesigns d = default_designs(s.frame);

    const EstimatingSystem a = build_system(s.frame, d, SystemKind::kComplementWeighted);
    const StackedParams pa = solve_plugin(a);
    const PropensityPair props_a = fitted_props(a, pa);
    const MisclassRates rates{pa.p11, pa.p10};
    CHECK(std::abs(pa.beta - tau_s_nonval(s.frame, props_a, rates).tau) <= 1e-10);
    CHECK(std::abs(pa.tau_s_val - tau_s_val_only(s.frame, props_a).tau) <= 1e-12);

    const EstimatingSystem b = build_system(s.frame, d, SystemKind::kFullSampleWeighted);
    const StackedParams pb = solve_plugin(b);
    CHECK(std::abs(pb.beta - tau_all_silver(s.frame, fitted_props(b, pb), rates).tau) <= 1e-10);
    CHECK((*pb.gamma_s - pb.gamma).cwiseAbs().maxCoeff() == 0.0);

    // Horvitz-Thompson complement rows with constant pi_V
    const EstimatingSystem c = build_system(s.frame, d, SystemKind::kComplementUnweighted);
    const StackedParams pc = solve_plugin(c);
    const PropensityPair props_c = fitted_props(c, pc);
    CHECK(std::abs(props_c.pi_v[0] - s.frame.n_validated() / double(s.frame.size())) <= 1e-14);
    CHECK(std::abs(pc.beta - tau_nonval_corrected(s.frame, props_c, rates).tau) <= 1e-10);
    CHECK(std::abs(pc.tau_s_val - tau_val_only(s.frame, props_c).tau) <= 1e-10);
  }
}

TEST_CASE("perfect classification reduces the full-sample slope to Hajek IPW") {
  SimulatedSample s = simulated(44);
  s.frame.y_star = s.gold_truth;
  const EstimatingSystem b =
      build_system(s.frame, default_designs(s.frame), SystemKind::kFullSampleWeighted);
  const StackedParams p = solve_plugin(b);
  CHECK(p.p11 == 1.0);
  CHECK(p.p10 == 0.0);
  const VectorXd e = expit(VectorXd(b.designs().treatment * p.gamma));
  const VectorXd w1 = s.frame.t.array() / e.array();
  const VectorXd w0 = (1.0 - s.frame.t.array()) / (1.0 - e.array());
  CHECK(std::abs(p.beta - hajek_contrast(w1, w0, s.gold_truth)) <= 1e-10);
}

TEST_CASE("sandwich covariance is symmetric and matches a standalone logistic sandwich") {
  const SimulatedSample s = simulated(8);
  const ModelDesigns d = default_designs(s.frame);
  for (SystemKind kind : kKinds) {
    const EstimatingSystem sys = build_system(s.frame, d, kind);
    const StackedParams p = solve_plugin(sys);
    const SandwichResult r = sandwich(sys, p);
    CHECK((r.covariance - r.covariance.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((r.se.array() > 0).all());

    const MatrixXd gcov = logistic_sandwich(d.treatment, s.frame.t, p.gamma);
    for (Eigen::Index j = 0; j < p.gamma.size(); ++j) {
      const double se = std::sqrt(gcov(j, j));
      CHECK(std::abs(r.se[p.gamma_offset() + j] - se) <= 1e-6 * se);
    }
    if (kind != SystemKind::kComplementUnweighted) {
      const MatrixXd ecov = logistic_sandwich(d.selection, s.frame.v, p.eta);
      for (Eigen::Index j = 0; j < p.eta.size(); ++j) {
        const double se = std::sqrt(ecov(j, j));
        CHECK(std::abs(r.se[p.eta_offset() + j] - se) <= 1e-6 * se);
      }
    }
  }
}

TEST_CASE("IPW sandwich matches the analytic bread") {
  const SimulatedSample s = simulated(12);
  const ModelDesigns d = default_designs(s.frame);
  const VectorXd& t = s.frame.t;
  const VectorXd& y = s.gold_truth;
  const IpwInference ipw = ipw_with_sandwich(t, y, d.treatment);

  const Eigen::Index n = t.size(), q = d.treatment.cols();
  MatrixXd bread = MatrixXd::Zero(1 + q, 1 + q), meat = MatrixXd::Zero(1 + q, 1 + q);
  double tau = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = 1 / (1 + std::exp(-d.treatment.row(i).dot(ipw.gamma)));
    tau += t[i] * y[i] / e - (1 - t[i]) * y[i] / (1 - e);
  }
  tau /= n;
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd x = d.treatment.row(i).transpose();
    const double e = 1 / (1 + std::exp(-x.dot(ipw.gamma)));
    VectorXd phi(1 + q);
    phi[0] = t[i] * y[i] / e - (1 - t[i]) * y[i] / (1 - e) - tau;
    phi.tail(q) = (t[i] - e) * x;
    meat += phi * phi.transpose();
    // minus the derivative of phi_i
    bread(0, 0) += 1;
    bread.block(0, 1, 1, q) +=
        ((t[i] * y[i] * (1 - e) / e + (1 - t[i]) * y[i] * e / (1 - e)) * x).transpose();
    bread.block(1, 1, q, q) += e * (1 - e) * x * x.transpose();
  }
  bread /= n;
  meat /= n;
  const MatrixXd inv = bread.inverse();
  const double se = std::sqrt((inv * meat * inv.transpose())(0, 0) / n);
  CHECK(std::abs(ipw.tau - tau) <= 1e-12);
  CHECK(std::abs(ipw.se - se) <= 1e-6 * se);
}

TEST_CASE("delta-method combinations") {
  SandwichResult r;
  r.theta_hat.tau_s_val = 1.0;
  r.theta_hat.beta = 3.0;
  const StackedParams& p = r.theta_hat;
  r.covariance = MatrixXd::Zero(p.size(), p.size());
  r.covariance(p.tau_index(), p.tau_index()) = 4.0;
  r.covariance(p.beta_index(), p.beta_index()) = 4.0;
  r.se = r.covariance.diagonal().cwiseSqrt();

  const DeltaResult single = combine_delta(r, 1.0, p.tau_index(), 0.0, p.beta_index());
  CHECK(single.point == 1.0);
  CHECK(single.se == 2.0);

  const DeltaResult half = combine_delta(r, 0.5, p.tau_index(), 0.5, p.beta_index());
  CHECK(half.point == 2.0);
  CHECK(half.se == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  r.covariance(p.tau_index(), p.beta_index()) = r.covariance(p.beta_index(), p.tau_index()) = 4.0;
  CHECK(combine_delta(r, 1.0, p.tau_index(), -1.0, p.beta_index()).se == 0.0);
  CHECK_THROWS_AS(combine_delta(r, 1.0, 99, 0.0, 0), Error);
}

TEST_CASE("confidence intervals") {
  const auto [lo, hi] = confidence_interval(0.0, 1.0);
  CHECK(lo == doctest::Approx(-1.95996).epsilon(1e-5));
  CHECK(hi == doctest::Approx(1.95996).epsilon(1e-5));
  const auto [a, b] = confidence_interval(0.07, 0.03);
  CHECK(a == doctest::Approx(0.01121).epsilon(1e-4));
  CHECK(b == doctest::Approx(0.12879).epsilon(1e-5));
  const auto [c, e] = confidence_interval(0.3, 0.0);
  CHECK(c == 0.3);
  CHECK(e == 0.3);
  const auto [lo90, hi90] = confidence_interval(0.0, 1.0, 0.90);
  CHECK(hi90 == doctest::Approx(1.6448536269514722).epsilon(1e-10));
  CHECK(lo90 == -hi90);
}

TEST_CASE("build_system rejects a validation sample with one gold class") {
  SimulatedSample s = simulated(5);
  for (Eigen::Index i = 0; i < s.frame.size(); ++i) {
    if (s.frame.v[i] == 1) s.frame.y[i] = 0.0;
  }
  try {
    build_system(s.frame, default_designs(s.frame), SystemKind::kComplementWeighted);
    FAIL("expected DegenerateValidation");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateValidation);
  }
}

TEST_CASE("parameter packing round trips") {
  const SimulatedSample s = simulated(6);
  const EstimatingSystem sys =
      build_system(s.frame, default_designs(s.frame), SystemKind::kFullSampleWeighted);
  const StackedParams p = solve_plugin(sys);
  const VectorXd theta = p.pack();
  CHECK(theta.size() == sys.dimension());
  CHECK((sys.unpack(theta).pack() - theta).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(sys.unpack(theta.head(3)), Error);
}
