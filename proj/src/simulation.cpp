#include "mismeasure/simulation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "mismeasure/errors.hpp"
#include "mismeasure/numerics.hpp"

namespace mismeasure {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Runs body(i) for i in [0, count) over `workers` threads. The first
// exception thrown is rethrown after all threads join.
template <class Body>
void parallel_for(Index count, int workers, Body&& body) {
  const int threads = std::max(1, std::min<int>(workers, static_cast<int>(std::max<Index>(count, 1))));
  if (threads == 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const Index i = next.fetch_add(1);
        if (i >= count || failed.load()) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
          failed.store(true);
        }
      }
    });
  }
  for (std::thread& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

MatrixXd with_intercept(const MatrixXd& x) {
  MatrixXd out(x.rows(), x.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(x.cols()) = x;
  return out;
}

MatrixXd drop_column(const MatrixXd& m, Index col) {
  MatrixXd out(m.rows(), m.cols() - 1);
  out.leftCols(col) = m.leftCols(col);
  out.rightCols(m.cols() - col - 1) = m.rightCols(m.cols() - col - 1);
  return out;
}

double ipw_estimate(const VectorXd& t, const VectorXd& y, const VectorXd& e) {
  const auto tt = t.array();
  return (tt * y.array() / e.array() - (1.0 - tt) * y.array() / (1.0 - e.array())).mean();
}

struct IterationOutcome {
  bool failed = false;
  std::string failure;
  std::vector<AteEstimate> estimates;
  Index n_validated = 0;
  bool b_opt_fallback = false;
};

double scenario_truth(const ScenarioConfig& config, ScenarioResult& result, int workers) {
  if (config.truth) return *config.truth;
  result.truth_estimate =
      true_ate_oracle(config.dgp, config.truth_config,
                      derive_seed(config.base_seed, kTruthStream, 0), workers);
  return result.truth_estimate->value;
}

}  // namespace

std::uint64_t Rng::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  return splitmix64(state_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_) {
    const double z = *spare_;
    spare_.reset();
    return z;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  return r * std::cos(a);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t h = splitmix64(base_seed + 0x9E3779B97F4A7C15ULL);
  h = splitmix64(h ^ (stream * 0xD6E8FEB86659FD93ULL));
  return splitmix64(h ^ (index + 1) * 0xA0761D6478BD642FULL);
}

DgpConfig DgpConfig::base() {
  DgpConfig cfg;
  cfg.treatment_coefs = VectorXd::Constant(cfg.p + 1, 0.3);
  cfg.treatment_coefs[0] = 0.8;
  cfg.outcome_coefs = VectorXd::Ones(cfg.p + 2);
  cfg.outcome_coefs[0] = -3.9;
  return cfg;
}

void DgpConfig::validate() const {
  if (n <= 0 || p <= 0) throw Error(ErrorCode::kInvalidFrame, "n and p must be positive");
  if (treatment_coefs.size() != p + 1) {
    throw Error(ErrorCode::kDimensionMismatch, "treatment_coefs must have p + 1 entries");
  }
  if (outcome_coefs.size() != p + 2) {
    throw Error(ErrorCode::kDimensionMismatch, "outcome_coefs must have p + 2 entries");
  }
  const auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(p11) || !in_unit(p10)) {
    throw Error(ErrorCode::kInvalidPropensity, "misclassification rates must lie in [0,1]");
  }
}

SelectionConfig SelectionConfig::srs(Index target_nv) {
  SelectionConfig cfg;
  cfg.kind = SelectionKind::kSrs;
  cfg.target_nv = target_nv;
  cfg.calibrate = false;
  return cfg;
}

SelectionConfig SelectionConfig::non_probability(Index target_nv) {
  SelectionConfig cfg;
  cfg.kind = SelectionKind::kNonProbability;
  cfg.target_nv = target_nv;
  cfg.alpha0.resize(7);
  cfg.alpha0 << 0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 0.0;
  cfg.calibrate = true;
  return cfg;
}

void SelectionConfig::validate(const DgpConfig& dgp) const {
  if (target_nv <= 0 || target_nv > dgp.n) {
    throw Error(ErrorCode::kDegenerateValidation, "target_nv must lie in (0, n]");
  }
  if (kind == SelectionKind::kNonProbability && alpha0.size() != dgp.p + 2) {
    throw Error(ErrorCode::kDimensionMismatch, "alpha0 must have p + 2 entries");
  }
  if (misspecify_drop && (*misspecify_drop < 1 || *misspecify_drop > dgp.p)) {
    throw Error(ErrorCode::kDimensionMismatch, "misspecify_drop must name a covariate 1..p");
  }
}

void ScenarioConfig::validate() const {
  dgp.validate();
  selection.validate(dgp);
  if (iterations <= 0) throw Error(ErrorCode::kConfigParseError, "iterations must be positive");
  if ((b && !(*b >= 0.0 && *b <= 1.0)) || !(w >= 0.0 && w <= 1.0)) {
    throw Error(ErrorCode::kWeightOutOfRange, "w and b must lie in [0,1]");
  }
  if (truth_config.populations <= 0 || truth_config.population_size <= 0) {
    throw Error(ErrorCode::kConfigParseError, "truth populations and size must be positive");
  }
}

std::vector<EstimatorId> table_estimators() {
  return {EstimatorId::kOracle,    EstimatorId::kValOnly,   EstimatorId::kSyCombined,
          EstimatorId::kSCombined, EstimatorId::kSValOnly,  EstimatorId::kAllSilver,
          EstimatorId::kSWeighted, EstimatorId::kSOpt};
}

SimulatedPopulation generate_population(const DgpConfig& dgp, Rng& rng) {
  return generate_population(dgp, dgp.n, rng);
}

SimulatedPopulation generate_population(const DgpConfig& dgp, Index n, Rng& rng) {
  const Index p = dgp.p;
  SimulatedPopulation pop;
  pop.x.resize(n, p);
  pop.t.resize(n);
  pop.y.resize(n);
  pop.y_star.resize(n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) pop.x(i, j) = rng.normal();
    const double lt = dgp.treatment_coefs[0] + pop.x.row(i).dot(dgp.treatment_coefs.tail(p));
    const double t = rng.bernoulli(expit(lt)) ? 1.0 : 0.0;
    const double ly = dgp.outcome_coefs[0] + dgp.outcome_coefs[1] * t +
                      pop.x.row(i).dot(dgp.outcome_coefs.tail(p));
    const double y = rng.bernoulli(expit(ly)) ? 1.0 : 0.0;
    double p10 = dgp.p10;
    if (dgp.heterogeneous_misclass) {
      p10 = expit(dgp.heterogeneous_misclass->first + dgp.heterogeneous_misclass->second * t);
    }
    const double y_star = rng.bernoulli(y == 1.0 ? dgp.p11 : p10) ? 1.0 : 0.0;
    pop.t[i] = t;
    pop.y[i] = y;
    pop.y_star[i] = y_star;
  }
  return pop;
}

MatrixXd selection_covariates(const SimulatedPopulation& pop) {
  MatrixXd out(pop.x.rows(), pop.x.cols() + 2);
  out.col(0).setOnes();
  out.col(1) = pop.t;
  out.rightCols(pop.x.cols()) = pop.x;
  return out;
}

std::optional<double> calibrate_intercept(const DgpConfig& dgp, const SelectionConfig& selection,
                                          Rng& rng) {
  if (selection.kind == SelectionKind::kSrs) return std::nullopt;
  selection.validate(dgp);
  const SimulatedPopulation pop = generate_population(dgp, kCalibrationRows, rng);
  const MatrixXd xs = selection_covariates(pop);
  const VectorXd rest = xs.rightCols(xs.cols() - 1) * selection.alpha0.tail(xs.cols() - 1);
  const double n = static_cast<double>(dgp.n);
  const double target = static_cast<double>(selection.target_nv);
  const auto gap = [&](double a) {
    return n * (rest.array() + a).unaryExpr([](double z) { return expit(z); }).mean() - target;
  };
  double lo = -20.0;
  double hi = 20.0;
  if (gap(lo) > 0.0 || gap(hi) < 0.0) {
    throw Error(ErrorCode::kCalibrationFailed, "target_nv is not bracketed by [-20, 20]");
  }
  for (int step = 0; step < kMaxBisectionSteps; ++step) {
    const double mid = 0.5 * (lo + hi);
    const double g = gap(mid);
    if (std::abs(g) <= 1.0) return mid;
    (g < 0.0 ? lo : hi) = mid;
  }
  throw Error(ErrorCode::kCalibrationFailed, "bisection did not reach the target within 1");
}

SimulatedSample select_validation(const SimulatedPopulation& pop, const SelectionConfig& selection,
                                  std::optional<double> intercept, Rng& rng) {
  const Index n = pop.t.size();
  VectorXd pi_v(n);
  if (selection.kind == SelectionKind::kSrs) {
    pi_v.setConstant(static_cast<double>(selection.target_nv) / static_cast<double>(n));
  } else {
    VectorXd alpha = selection.alpha0;
    if (intercept) alpha[0] = *intercept;
    pi_v = expit(selection_covariates(pop) * alpha);
  }
  SimulatedSample sample;
  sample.pi_v = pi_v;
  sample.gold_truth = pop.y;
  ObservationFrame& f = sample.frame;
  f.x = pop.x;
  f.t = pop.t;
  f.y_star = pop.y_star;
  f.v.resize(n);
  f.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const bool validated = rng.bernoulli(pi_v[i]);
    f.v[i] = validated ? 1.0 : 0.0;
    f.y[i] = validated ? pop.y[i] : kMissing;
  }
  return sample;
}

TruthEstimate true_ate_oracle(const DgpConfig& dgp, const TruthConfig& truth, std::uint64_t seed,
                              int workers) {
  dgp.validate();
  if (truth.populations <= 0 || truth.population_size <= 0) {
    throw Error(ErrorCode::kConfigParseError, "truth populations and size must be positive");
  }
  VectorXd values(truth.populations);
  parallel_for(truth.populations, workers, [&](Index k) {
    Rng rng(derive_seed(seed, kTruthStream, static_cast<std::uint64_t>(k)));
    const SimulatedPopulation pop = generate_population(dgp, truth.population_size, rng);
    const MatrixXd design = with_intercept(pop.x);
    const LogisticFit<double> fit = fit_logistic<double>(design, pop.t);
    values[k] = ipw_estimate(pop.t, pop.y, predict_proba(fit, design));
  });
  TruthEstimate out;
  out.populations = truth.populations;
  out.value = values.mean();
  if (truth.populations > 1) {
    const double var = (values.array() - out.value).square().sum() /
                       static_cast<double>(truth.populations - 1);
    out.mc_se = std::sqrt(var / static_cast<double>(truth.populations));
  }
  return out;
}

std::optional<double> scenario_intercept(const ScenarioConfig& config) {
  if (config.selection.kind == SelectionKind::kSrs) return std::nullopt;
  if (!config.selection.calibrate) return config.selection.alpha0[0];
  Rng rng(derive_seed(config.base_seed, kCalibrationStream, 0));
  return calibrate_intercept(config.dgp, config.selection, rng);
}

SimulatedSample iteration_sample(const ScenarioConfig& config, std::optional<double> intercept,
                                 Index iteration) {
  Rng rng(derive_seed(config.base_seed, kIterationStream, static_cast<std::uint64_t>(iteration)));
  const SimulatedPopulation pop = generate_population(config.dgp, rng);
  return select_validation(pop, config.selection, intercept, rng);
}

AnalysisDesigns scenario_designs(const ScenarioConfig& config, const ObservationFrame& frame) {
  AnalysisDesigns designs;
  designs.treatment = with_intercept(frame.x);
  designs.oracle_treatment = designs.treatment;
  const bool srs = config.selection.kind == SelectionKind::kSrs;
  if (srs) {
    designs.selection = intercept_only(frame.size());
  } else {
    designs.selection.resize(frame.size(), frame.x.cols() + 2);
    designs.selection.col(0).setOnes();
    designs.selection.col(1) = frame.t;
    designs.selection.rightCols(frame.x.cols()) = frame.x;
  }
  if (const std::optional<Index> drop = config.selection.misspecify_drop) {
    // X_k sits at column k of (1, X) and column k + 1 of (1, T, X).
    if (config.selection.drop_from_treatment_model) {
      designs.treatment = drop_column(designs.treatment, *drop);
    }
    if (!srs) designs.selection = drop_column(designs.selection, *drop + 1);
  }
  return designs;
}

const EstimatorSummary* ScenarioResult::find(EstimatorId id) const {
  for (const EstimatorSummary& row : rows) {
    if (row.id == id) return &row;
  }
  return nullptr;
}

ScenarioResult run_scenario(const ScenarioConfig& config, int workers) {
  config.validate();
  const std::vector<EstimatorId> estimators =
      config.estimators.empty() ? table_estimators() : config.estimators;

  ScenarioResult result;
  result.name = config.name;
  result.iterations = config.iterations;
  result.truth = scenario_truth(config, result, workers);

  const std::optional<double> intercept = scenario_intercept(config);
  result.calibrated_intercept = intercept;

  AnalysisOptions options;
  options.estimators = estimators;
  options.w = config.w;
  options.b = config.b;
  options.variant = config.variant;

  std::vector<IterationOutcome> outcomes(static_cast<std::size_t>(config.iterations));
  parallel_for(config.iterations, workers, [&](Index it) {
    IterationOutcome& out = outcomes[static_cast<std::size_t>(it)];
    const SimulatedSample sample = iteration_sample(config, intercept, it);
    out.n_validated = sample.frame.n_validated();
    const AnalysisDesigns designs = scenario_designs(config, sample.frame);
    try {
      AnalysisResult analysis = analyze(sample.frame, designs, options, &sample.gold_truth);
      if (analysis.estimates.size() != estimators.size()) {
        throw Error(ErrorCode::kDegenerateValidation, "validation sample is empty");
      }
      out.estimates = std::move(analysis.estimates);
      out.b_opt_fallback = analysis.b_opt && analysis.b_opt->degenerate;
    } catch (const Error& err) {
      if (!is_recoverable(err.code())) throw;
      out.failed = true;
      out.failure = std::string(to_string(err.code()));
    }
  });

  double nv_sum = 0.0;
  for (const IterationOutcome& out : outcomes) {
    nv_sum += static_cast<double>(out.n_validated);
    if (out.failed) {
      ++result.failures;
      ++result.failure_reasons[out.failure];
    }
    if (out.b_opt_fallback) ++result.b_opt_fallbacks;
  }
  result.mean_n_validated = nv_sum / static_cast<double>(config.iterations);
  if (static_cast<double>(result.failures) >
      kMaxFailureFraction * static_cast<double>(config.iterations)) {
    throw Error(ErrorCode::kTooManyFailures,
                std::to_string(result.failures) + " of " + std::to_string(config.iterations) +
                    " iterations failed");
  }
  if (result.failures > 0) {
    result.warnings.push_back(std::to_string(result.failures) +
                              " iterations failed and were excluded from every estimator");
  }
  if (result.b_opt_fallbacks > 0) {
    result.warnings.push_back(std::to_string(result.b_opt_fallbacks) +
                              " iterations used the b = 0.5 fallback for b_opt");
  }

  for (std::size_t k = 0; k < estimators.size(); ++k) {
    EstimatorSummary row;
    row.id = estimators[k];
    double sum = 0.0;
    double se_sum = 0.0;
    Index covered = 0;
    for (const IterationOutcome& out : outcomes) {
      if (out.failed) continue;
      const AteEstimate& est = out.estimates[k];
      sum += est.tau;
      se_sum += est.se.value_or(0.0);
      if (est.ci_low && est.ci_high && *est.ci_low <= result.truth && result.truth <= *est.ci_high) {
        ++covered;
      }
      ++row.used;
    }
    if (row.used == 0) continue;
    const double used = static_cast<double>(row.used);
    row.mean_estimate = sum / used;
    row.bias = row.mean_estimate - result.truth;
    row.mean_sandwich_se = se_sum / used;
    row.coverage = static_cast<double>(covered) / used;
    if (row.used > 1) {
      double ss = 0.0;
      for (const IterationOutcome& out : outcomes) {
        if (out.failed) continue;
        const double d = out.estimates[k].tau - row.mean_estimate;
        ss += d * d;
      }
      row.empirical_se = std::sqrt(ss / (used - 1.0));
    }
    result.rows.push_back(row);
  }
  return result;
}

std::vector<ScenarioConfig> scenario_catalog() {
  std::vector<ScenarioConfig> out;
  const auto add = [&](std::string name, DgpConfig dgp, SelectionConfig sel) {
    ScenarioConfig cfg;
    cfg.name = std::move(name);
    cfg.dgp = std::move(dgp);
    cfg.selection = std::move(sel);
    cfg.estimators = table_estimators();
    out.push_back(std::move(cfg));
  };
  const DgpConfig base = DgpConfig::base();

  add("main_srs", base, SelectionConfig::srs());
  add("main_nonprob", base, SelectionConfig::non_probability());
  for (Index nv : {Index{500}, Index{1500}}) {
    const std::string tag = "nv" + std::to_string(nv);
    add(tag + "_srs", base, SelectionConfig::srs(nv));
    add(tag + "_nonprob", base, SelectionConfig::non_probability(nv));
  }
  for (double p10 : {0.16, 0.32}) {
    DgpConfig dgp = base;
    dgp.p10 = p10;
    const std::string tag = p10 < 0.2 ? "p10_016" : "p10_032";
    add(tag + "_srs", dgp, SelectionConfig::srs());
    add(tag + "_nonprob", dgp, SelectionConfig::non_probability());
  }
  {
    SelectionConfig sel = SelectionConfig::non_probability();
    sel.alpha0 << -2.2, -0.5, -1.0, -1.0, -1.0, -1.0, 0.0;
    sel.calibrate = false;
    add("flipped_alpha", base, sel);
  }
  {
    SelectionConfig sel = SelectionConfig::non_probability();
    sel.alpha0 << -4.0, 1.0, 1.5, 1.5, 1.5, 1.5, 0.0;
    sel.calibrate = false;
    add("strong_alpha", base, sel);
  }
  {
    DgpConfig dgp = base;
    dgp.heterogeneous_misclass = std::make_pair(-2.0, 0.5);
    add("heterogeneous_srs", dgp, SelectionConfig::srs());
    add("heterogeneous_nonprob", dgp, SelectionConfig::non_probability());
  }
  {
    SelectionConfig sel = SelectionConfig::non_probability();
    sel.misspecify_drop = 2;
    add("misspecified_selection", base, sel);
  }
  return out;
}

std::optional<ScenarioConfig> find_scenario(const std::string& name) {
  const std::vector<ScenarioConfig> catalog = scenario_catalog();
  // Bare family names (nv1500, p10_032, heterogeneous, ...) select the
  // non-probability variant.
  for (const std::string& candidate : {name, name + "_nonprob"}) {
    for (const ScenarioConfig& cfg : catalog) {
      if (cfg.name == candidate) return cfg;
    }
  }
  return std::nullopt;
}

}  // namespace mismeasure
