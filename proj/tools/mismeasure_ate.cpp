#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mismeasure/cli.hpp"

namespace {

using namespace mismeasure;
using namespace mismeasure::cli;

struct OutputFlags {
  std::string format = "table";
  std::string out;
};

void add_output_flags(CLI::App* cmd, OutputFlags& flags) {
  cmd->add_option("--format", flags.format, "table, csv or json")
      ->check(CLI::IsMember({"table", "csv", "json"}));
  cmd->add_option("--out", flags.out, "write the report to this file instead of stdout");
}

void emit(const RunReport& report, const OutputFlags& flags) {
  const std::string text = render(report, parse_output_format(flags.format));
  if (flags.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(flags.out, std::ios::binary);
  if (!out) throw Error(ErrorCode::kConfigParseError, "cannot write '" + flags.out + "'");
  out << text;
}

template <class T>
std::optional<T> if_set(const CLI::Option* opt, const T& value) {
  return opt->count() > 0 ? std::optional<T>(value) : std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Misclassification- and selection-corrected IPW estimators of the ATE"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo scenario (preset or config file)");
  std::string sim_target;
  std::int64_t sim_iterations = 0;
  std::uint64_t sim_seed = 0;
  int sim_workers = 1;
  bool sim_full = false;
  std::string sim_estimators;
  std::string sim_variant = "standard";
  double sim_truth = 0.0;
  std::int64_t sim_truth_pops = 0;
  double sim_b = 0.5;
  bool sim_timestamps = false;
  OutputFlags sim_out;
  sim->add_option("scenario", sim_target, "preset name or path to a scenario JSON")->required();
  auto* sim_iter_opt = sim->add_option("--iterations", sim_iterations)->check(CLI::PositiveNumber);
  auto* sim_seed_opt = sim->add_option("--seed", sim_seed);
  sim->add_option("--workers", sim_workers)->check(CLI::PositiveNumber);
  sim->add_flag("--full", sim_full, "full-scale run: 5000 iterations and 5000 truth populations");
  auto* sim_est_opt = sim->add_option("--estimators", sim_estimators, "comma-separated ids");
  sim->add_option("--selection-score-variant", sim_variant)
      ->check(CLI::IsMember({"standard", "printed"}));
  auto* sim_truth_opt = sim->add_option("--truth", sim_truth, "skip the truth oracle and use this value");
  auto* sim_pops_opt = sim->add_option("--truth-populations", sim_truth_pops)->check(CLI::PositiveNumber);
  auto* sim_b_opt = sim->add_option("--b", sim_b, "fixed weight for tau^S(Y_V,Y*) (default n_V/n)")
                        ->check(CLI::Range(0.0, 1.0));
  sim->add_flag("--timestamps", sim_timestamps, "record wall-clock times in the metadata");
  add_output_flags(sim, sim_out);

  // estimate
  auto* est = app.add_subcommand("estimate", "estimate the ATE on a CSV dataset");
  std::string est_data;
  std::string est_spec;
  std::string est_estimators;
  std::string est_variant = "standard";
  double est_b = 0.5;
  double est_w = 0.5;
  double est_level = 0.95;
  bool est_timestamps = false;
  OutputFlags est_out;
  est->add_option("data", est_data, "CSV with x1..xp, t, ystar, v, y")->required();
  auto* est_spec_opt = est->add_option("--model-spec", est_spec, "JSON naming model covariates");
  auto* est_est_opt = est->add_option("--estimators", est_estimators, "comma-separated ids");
  est->add_option("--selection-score-variant", est_variant)
      ->check(CLI::IsMember({"standard", "printed"}));
  auto* est_b_opt = est->add_option("--b", est_b)->check(CLI::Range(0.0, 1.0));
  est->add_option("--w", est_w)->check(CLI::Range(0.0, 1.0));
  est->add_option("--level", est_level)->check(CLI::Range(0.5, 0.999999));
  est->add_flag("--timestamps", est_timestamps);
  add_output_flags(est, est_out);

  // true-ate
  auto* truth = app.add_subcommand("true-ate", "large-sample estimate of the true ATE");
  std::string truth_config;
  std::uint64_t truth_seed = 0;
  int truth_workers = 1;
  bool truth_full = false;
  std::int64_t truth_pops = 0;
  std::int64_t truth_size = 0;
  bool truth_timestamps = false;
  OutputFlags truth_out;
  auto* truth_config_opt = truth->add_option("config", truth_config, "DGP config JSON (optional)");
  auto* truth_seed_opt = truth->add_option("--seed", truth_seed);
  truth->add_option("--workers", truth_workers)->check(CLI::PositiveNumber);
  truth->add_flag("--full", truth_full, "5000 populations");
  auto* truth_pops_opt = truth->add_option("--populations", truth_pops)->check(CLI::PositiveNumber);
  auto* truth_size_opt = truth->add_option("--population-size", truth_size)->check(CLI::PositiveNumber);
  truth->add_flag("--timestamps", truth_timestamps);
  add_output_flags(truth, truth_out);

  // generate
  auto* gen = app.add_subcommand("generate", "export one simulated dataset as CSV");
  std::string gen_target;
  std::int64_t gen_iteration = 0;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  std::string gen_spec_out;
  gen->add_option("scenario", gen_target, "preset name or scenario JSON")->required();
  gen->add_option("--iteration", gen_iteration, "which Monte Carlo iteration to export")
      ->check(CLI::NonNegativeNumber);
  auto* gen_seed_opt = gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out, "CSV path")->required();
  gen->add_option("--model-spec-out", gen_spec_out, "write the scenario's model spec JSON");

  // list-scenarios
  auto* list = app.add_subcommand("list-scenarios", "print the preset names");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfigError;
  }

  try {
    if (*sim) {
      SimulateOptions opts;
      opts.iterations = if_set<Eigen::Index>(sim_iter_opt, sim_iterations);
      opts.seed = if_set(sim_seed_opt, sim_seed);
      opts.workers = sim_workers;
      opts.full = sim_full;
      if (sim_est_opt->count() > 0) opts.estimators = parse_estimator_list(sim_estimators);
      opts.variant = parse_score_variant(sim_variant);
      opts.truth = if_set(sim_truth_opt, sim_truth);
      opts.truth_populations = if_set<Eigen::Index>(sim_pops_opt, sim_truth_pops);
      opts.b = if_set(sim_b_opt, sim_b);
      opts.timestamps = sim_timestamps;
      emit(cmd_simulate(sim_target, opts), sim_out);
    } else if (*est) {
      EstimateOptions opts;
      if (est_est_opt->count() > 0) opts.estimators = parse_estimator_list(est_estimators);
      opts.variant = parse_score_variant(est_variant);
      opts.b = if_set(est_b_opt, est_b);
      opts.w = est_w;
      opts.level = est_level;
      opts.timestamps = est_timestamps;
      emit(cmd_estimate(est_data, if_set(est_spec_opt, est_spec), opts), est_out);
    } else if (*truth) {
      TrueAteOptions opts;
      opts.seed = if_set(truth_seed_opt, truth_seed);
      opts.workers = truth_workers;
      opts.full = truth_full;
      opts.populations = if_set<Eigen::Index>(truth_pops_opt, truth_pops);
      opts.population_size = if_set<Eigen::Index>(truth_size_opt, truth_size);
      opts.timestamps = truth_timestamps;
      emit(cmd_true_ate(if_set(truth_config_opt, truth_config), opts), truth_out);
    } else if (*gen) {
      SimulateOptions opts;
      opts.seed = if_set(gen_seed_opt, gen_seed);
      const ScenarioConfig cfg = resolve_scenario(gen_target, opts);
      const SimulatedSample sample = scenario_sample(cfg, gen_iteration);
      std::ofstream out(gen_out, std::ios::binary);
      if (!out) throw Error(ErrorCode::kConfigParseError, "cannot write '" + gen_out + "'");
      write_frame_csv(out, sample.frame);
      if (!gen_spec_out.empty()) {
        std::ofstream spec(gen_spec_out, std::ios::binary);
        if (!spec) throw Error(ErrorCode::kConfigParseError, "cannot write '" + gen_spec_out + "'");
        spec << model_spec_json(scenario_model_spec(cfg));
      }
    } else if (*list) {
      for (const ScenarioConfig& cfg : scenario_catalog()) std::cout << cfg.name << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitComputationError;
  }
  return kExitOk;
}
