#ifndef MISMEASURE_CLI_HPP_
#define MISMEASURE_CLI_HPP_

// Command implementations behind the `mismeasure-ate` tool: dataset and
// config ingestion, report assembly and rendering. Kept in the library so
// the commands can be tested without spawning a process.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mismeasure/analysis.hpp"
#include "mismeasure/errors.hpp"
#include "mismeasure/estimators.hpp"
#include "mismeasure/frame.hpp"
#include "mismeasure/inference.hpp"
#include "mismeasure/simulation.hpp"

namespace mismeasure::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kSeedEnvVar = "MISMEASURE_ATE_SEED";
inline constexpr std::uint64_t kDefaultSeed = 42;

inline constexpr Eigen::Index kDeskIterations = 1000;
inline constexpr Eigen::Index kFullIterations = 5000;
inline constexpr Eigen::Index kDeskTruthPopulations = 100;
inline constexpr Eigen::Index kFullTruthPopulations = 5000;

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitComputationError = 3;

// 2 for configuration and input-schema errors, 3 for everything else.
int exit_code_for(ErrorCode code);

enum class OutputFormat { kTable, kCsv, kJson };
OutputFormat parse_output_format(const std::string& name);
TreatmentScoreVariant parse_score_variant(const std::string& name);
std::vector<EstimatorId> parse_estimator_list(const std::string& comma_list);

using Cell = std::variant<std::monostate, std::string, std::int64_t, double>;

struct Column {
  std::string key;    // CSV header and JSON field
  std::string title;  // table header
};

struct RunReport {
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
  std::vector<Column> columns;
  std::vector<std::vector<Cell>> rows;
  std::vector<std::string> warnings;

  // Ignores a warning already present.
  void add_warning(const std::string& warning);
};

// Throws Error(kNonFiniteEvaluation) if any number is NaN or infinite.
std::string render(const RunReport& report, OutputFormat format);

// Data CSV: header with x1..xp, t, ystar, v, y; y empty exactly where v = 0.
ObservationFrame read_frame_csv(std::istream& in, const std::string& source = "<stream>");
ObservationFrame read_frame_csv_file(const std::string& path);
void write_frame_csv(std::ostream& out, const ObservationFrame& frame);

// Scenario config JSON with keys dgp, selection, iterations (required), seed
// and estimators, plus optional name, truth, truth_populations, b, w.
// Unknown keys raise kConfigParseError naming the key and its line.
struct ParsedScenario {
  ScenarioConfig config;
  bool seed_given = false;
};
ParsedScenario parse_scenario_config(const std::string& text, const std::string& source);

// DGP-only config for true-ate: {"dgp": {...}, "populations": k,
// "population_size": m, "seed": s}; every key optional.
struct ParsedTruthConfig {
  DgpConfig dgp = DgpConfig::base();
  TruthConfig truth;
  std::optional<std::uint64_t> seed;
};
ParsedTruthConfig parse_truth_config(const std::string& text, const std::string& source);

// Model spec JSON: {"treatment_covariates": [...], "selection_covariates": [...]}.
// Names are x1..xp, plus t for the selection model. Missing lists default
// to every covariate (and t for selection). An intercept is always added.
struct ModelSpec {
  std::vector<std::string> treatment;
  std::vector<std::string> selection;
};
ModelSpec parse_model_spec(const std::string& text, const std::string& source);
std::string model_spec_json(const ModelSpec& spec);
ModelSpec default_model_spec(const ObservationFrame& frame);
// The spec matching scenario_designs() for a scenario with p covariates.
ModelSpec scenario_model_spec(const ScenarioConfig& config);
AnalysisDesigns build_designs(const ObservationFrame& frame, const ModelSpec& spec);

// --seed beats a seed in the config file, which beats MISMEASURE_ATE_SEED,
// which beats the built-in default.
std::uint64_t resolve_seed(std::optional<std::uint64_t> flag,
                           std::optional<std::uint64_t> config_seed);

struct SimulateOptions {
  std::optional<Eigen::Index> iterations;
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool full = false;
  std::optional<std::vector<EstimatorId>> estimators;
  TreatmentScoreVariant variant = TreatmentScoreVariant::kStandard;
  std::optional<double> truth;
  std::optional<Eigen::Index> truth_populations;
  std::optional<double> b;
  bool timestamps = false;
};

// `target` is a preset name or a path to a scenario config file.
ScenarioConfig resolve_scenario(const std::string& target, const SimulateOptions& options);
RunReport cmd_simulate(const std::string& target, const SimulateOptions& options);

struct EstimateOptions {
  std::optional<std::vector<EstimatorId>> estimators;
  TreatmentScoreVariant variant = TreatmentScoreVariant::kStandard;
  std::optional<double> b;
  double w = 0.5;
  double level = 0.95;
  bool timestamps = false;
};

RunReport estimate_report(const ObservationFrame& frame, const ModelSpec& spec,
                          const EstimateOptions& options);
RunReport cmd_estimate(const std::string& data_path,
                       const std::optional<std::string>& model_spec_path,
                       const EstimateOptions& options);

struct TrueAteOptions {
  std::optional<std::uint64_t> seed;
  int workers = 1;
  bool full = false;
  std::optional<Eigen::Index> populations;
  std::optional<Eigen::Index> population_size;
  bool timestamps = false;
};

RunReport cmd_true_ate(const std::optional<std::string>& config_path,
                       const TrueAteOptions& options);

// The observed data of one iteration of a scenario, exactly as the
// simulation harness sees it.
SimulatedSample scenario_sample(const ScenarioConfig& config, Eigen::Index iteration);

}  // namespace mismeasure::cli

#endif  // MISMEASURE_CLI_HPP_
