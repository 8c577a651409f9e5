#pragma once

#include "ide/baselines.hpp"
#include "ide/metrics.hpp"

#include <map>
#include <optional>

namespace ide {

// ---------------------------------------------------------------------------
// Experiment configuration: parsed from a plain `key = value` file
// ('#' starts a comment). Unspecified keys keep the documented defaults.
// ---------------------------------------------------------------------------
struct ExperimentConfig {
  // data source
  std::string data = "scm";  // scm | moons | csv
  std::string id;            // dataset label in reports (derived when empty)
  double scm_b = 3.0;
  Eigen::Index n = 1000;
  double moons_sigma = 0.75;
  std::string csv_path;
  std::optional<CsvSchema> csv_schema;  // inferred when absent

  // protocol
  std::vector<std::string> methods = {"infs"};
  int folds = 10;
  double train_fraction = 0.9;
  std::uint64_t seed = 42;
  std::string out_dir = "results";
  bool tune = false;
  int tune_budget = 50;
  int tune_cv_folds = 5;
  int jobs = 1;
  bool dump_densities = false;
  bool metrics_std_units = false;  // evaluate log-probs on the standardized scale
  // "auto": compute when counterfactuals and a sampler exist; "require":
  // error when the dataset lacks counterfactuals; "off": skip entirely
  std::string wasserstein = "auto";
  int wasserstein_draws = 10000;

  // per-method hyperparameters
  NuisanceHyperparams nuisance;
  NoiseRegConfig nuisance_noise{0.0025, 0.0025};
  TargetHyperparams target;
  BiasCorrConfig bias;
  TarnetHyperparams tarnet;
  MdnHyperparams mdn;
  KdeHyperparams kde;
  DkmeHyperparams dkme;
  TsHyperparams ts;

  static ExperimentConfig from_file(const std::string& path);
  static ExperimentConfig from_string(const std::string& text);
  void validate() const;

  std::string dataset_id() const;
  nlohmann::json to_json() const;
};

const std::vector<std::string>& known_methods();

// Deterministic dataset acquisition for a config.
ObservationalDataset load_dataset(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Hyperparameter tuning: random subsample of the method's grid, k-fold
// cross-validation on the (standardized) training split, method-specific
// criterion. Returns the chosen values as JSON and applies them to `cfg`.
// ---------------------------------------------------------------------------
nlohmann::json tune_hyperparams(const std::string& method,
                                const ObservationalDataset& train_std, ExperimentConfig& cfg,
                                std::uint64_t seed);

// Same, over an explicit candidate list (the built-in per-method grids are
// used by the overload above).
nlohmann::json tune_hyperparams(const std::string& method,
                                const ObservationalDataset& train_std, ExperimentConfig& cfg,
                                std::uint64_t seed, std::vector<nlohmann::json> grid);

// ---------------------------------------------------------------------------
// Full protocol: per fold split -> standardize on train -> (tune on fold 0)
// -> train -> evaluate both arms in- and out-of-sample. Returns one row per
// (method, arm, fold) and writes results.csv / timings.csv / summary.json
// under cfg.out_dir (plus density dumps when requested).
// ---------------------------------------------------------------------------
struct ExperimentResult {
  std::vector<MetricReport> rows;
  nlohmann::json tuned;    // chosen hyperparameters per method (when tuning)
  nlohmann::json summary;  // aggregate statistics
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Aggregates result rows: share of comparison units won per method (ties
// credit every tied method) and mean +- sd per metric.
nlohmann::json compare_methods(const std::vector<MetricReport>& rows);

std::vector<MetricReport> read_results_csv(const std::string& path);
void write_results_csv(const std::vector<MetricReport>& rows, const std::string& path);

// ---------------------------------------------------------------------------
// Single-fold train / evaluate used by the CLI `train` and `evaluate`
// subcommands; checkpoints are JSON files per method.
// ---------------------------------------------------------------------------
void train_fold(const ExperimentConfig& cfg, int fold, const std::string& checkpoint_dir);
std::vector<MetricReport> evaluate_fold(const ExperimentConfig& cfg, int fold,
                                        const std::string& checkpoint_dir);

}  // namespace ide
