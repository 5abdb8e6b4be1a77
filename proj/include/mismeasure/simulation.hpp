#ifndef MISMEASURE_SIMULATION_HPP_
#define MISMEASURE_SIMULATION_HPP_

// Monte Carlo laboratory: synthetic populations with a misclassified binary
// outcome, random or covariate-driven validation sampling, a large-sample
// estimate of the true ATE, and a deterministic parallel scenario runner.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mismeasure/analysis.hpp"
#include "mismeasure/estimators.hpp"
#include "mismeasure/frame.hpp"
#include "mismeasure/inference.hpp"

namespace mismeasure {

// 64-bit generator with explicitly defined uniform and normal draws, so a
// seed produces the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Standard normal via the Box-Muller transform.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
  std::optional<double> spare_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Counter-based child seed: independent of execution order, so serial and
// parallel runs draw identical streams for iteration `index`.
std::uint64_t derive_seed(std::uint64_t base_seed, std::uint64_t stream, std::uint64_t index);

inline constexpr std::uint64_t kIterationStream = 0x1;
inline constexpr std::uint64_t kCalibrationStream = 0x2;
inline constexpr std::uint64_t kTruthStream = 0x3;

struct DgpConfig {
  Eigen::Index n = 5000;
  Eigen::Index p = 5;
  Eigen::VectorXd treatment_coefs;  // (intercept, X_1..X_p)
  Eigen::VectorXd outcome_coefs;    // (intercept, T, X_1..X_p)
  double p11 = 0.67;
  double p10 = 0.24;
  // p10(T) = expit(first + second * T) when set.
  std::optional<std::pair<double, double>> heterogeneous_misclass;

  // n = 5000, p = 5, logit P(T=1) = 0.8 + 0.3 sum(X),
  // logit P(Y=1) = -3.9 + T + sum(X), p11 = 0.67, p10 = 0.24.
  static DgpConfig base();
  void validate() const;
};

enum class SelectionKind { kSrs, kNonProbability };

struct SelectionConfig {
  SelectionKind kind = SelectionKind::kNonProbability;
  Eigen::Index target_nv = 850;
  // Coefficients over (1, T, X_1..X_p); the intercept slot is replaced by
  // calibration when `calibrate` is set.
  Eigen::VectorXd alpha0;
  bool calibrate = true;
  // 1-based covariate X_k left out of the fitted propensity models. Data
  // generation is unchanged.
  std::optional<Eigen::Index> misspecify_drop;
  // Whether the dropped covariate is also left out of the treatment model
  // (the oracle estimator always keeps the full treatment model).
  bool drop_from_treatment_model = true;

  static SelectionConfig srs(Eigen::Index target_nv = 850);
  // alpha0 = (calibrated, 0.5, 1, 1, 1, 1, 0).
  static SelectionConfig non_probability(Eigen::Index target_nv = 850);
  void validate(const DgpConfig& dgp) const;
};

struct TruthConfig {
  Eigen::Index populations = 100;
  Eigen::Index population_size = 50000;
};

struct ScenarioConfig {
  std::string name;
  DgpConfig dgp = DgpConfig::base();
  SelectionConfig selection = SelectionConfig::non_probability();
  std::vector<EstimatorId> estimators;
  Eigen::Index iterations = 1000;
  std::uint64_t base_seed = 42;
  std::optional<double> truth;
  TruthConfig truth_config;
  double w = 0.5;
  std::optional<double> b;  // unset: n_V / n per iteration
  TreatmentScoreVariant variant = TreatmentScoreVariant::kStandard;

  void validate() const;
};

// The eight estimators reported in the simulation tables.
std::vector<EstimatorId> table_estimators();

struct SimulatedPopulation {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  Eigen::VectorXd y_star;
};

struct SimulatedSample {
  ObservationFrame frame;  // gold outcome masked off the validation sample
  Eigen::VectorXd gold_truth;
  Eigen::VectorXd pi_v;  // true selection probabilities
};

SimulatedPopulation generate_population(const DgpConfig& dgp, Rng& rng);
SimulatedPopulation generate_population(const DgpConfig& dgp, Eigen::Index n, Rng& rng);

// (1, T, X) for every row.
Eigen::MatrixXd selection_covariates(const SimulatedPopulation& pop);

// Intercept making n * E[pi_V] hit target_nv within 1 on a 200,000-row
// calibration population. std::nullopt for SRS.
std::optional<double> calibrate_intercept(const DgpConfig& dgp, const SelectionConfig& selection,
                                          Rng& rng);

inline constexpr Eigen::Index kCalibrationRows = 200000;
inline constexpr int kMaxBisectionSteps = 200;

// Draws V_i ~ Bernoulli(pi_V,i). `intercept` overrides alpha0[0] when given.
SimulatedSample select_validation(const SimulatedPopulation& pop, const SelectionConfig& selection,
                                  std::optional<double> intercept, Rng& rng);

struct TruthEstimate {
  double value = 0.0;
  double mc_se = 0.0;
  Eigen::Index populations = 0;
};

// Mean over populations of the IPW estimate computed with the true outcome
// and a fitted treatment model.
TruthEstimate true_ate_oracle(const DgpConfig& dgp, const TruthConfig& truth,
                              std::uint64_t seed, int workers = 1);

struct EstimatorSummary {
  EstimatorId id = EstimatorId::kOracle;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double empirical_se = 0.0;
  double mean_sandwich_se = 0.0;
  double coverage = 0.0;
  Eigen::Index used = 0;
};

struct ScenarioResult {
  std::string name;
  std::vector<EstimatorSummary> rows;
  Eigen::Index iterations = 0;
  Eigen::Index failures = 0;
  std::map<std::string, Eigen::Index> failure_reasons;
  double truth = 0.0;
  std::optional<TruthEstimate> truth_estimate;  // set when computed here
  std::optional<double> calibrated_intercept;
  double mean_n_validated = 0.0;
  Eigen::Index b_opt_fallbacks = 0;
  std::vector<std::string> warnings;

  const EstimatorSummary* find(EstimatorId id) const;
};

// Selection intercept used by every iteration: calibrated, taken from
// alpha0, or std::nullopt for SRS.
std::optional<double> scenario_intercept(const ScenarioConfig& config);

// Population and validation draw of iteration `iteration`.
SimulatedSample iteration_sample(const ScenarioConfig& config, std::optional<double> intercept,
                                 Eigen::Index iteration);

// Fitted-model designs for a scenario, honoring misspecify_drop. The oracle
// design is always the full (1, X).
AnalysisDesigns scenario_designs(const ScenarioConfig& config, const ObservationFrame& frame);

inline constexpr double kMaxFailureFraction = 0.01;

// Runs every iteration (possibly across `workers` threads) and reduces the
// outcomes in iteration order. Throws kTooManyFailures when more than 1% of
// iterations fail.
ScenarioResult run_scenario(const ScenarioConfig& config, int workers = 1);

// Named presets for the main and supplementary simulation settings.
std::vector<ScenarioConfig> scenario_catalog();
std::optional<ScenarioConfig> find_scenario(const std::string& name);

}  // namespace mismeasure

#endif  // MISMEASURE_SIMULATION_HPP_
