#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "muprop/data.hpp"
#include "muprop/estimators.hpp"
#include "muprop/models.hpp"

namespace muprop {

struct ExperimentConfig {
  Task task = Task::StructuredPrediction;
  std::string arch = "8-4-8";
  EstimatorConfig estimator{EstimatorKind::MuProp, BaselineFlags{true, false, false}, XbarChoice::InverseK};
  double learning_rate = 0.003;
  std::vector<double> lr_sweep;
  double momentum = 0.9;
  std::size_t batch_size = 100;
  std::size_t epochs = 10;
  /// Stops after this many updates when nonzero, cycling epochs as needed.
  std::size_t steps = 0;
  std::uint64_t seed = 1;
  /// "synthetic" (toy data generated in process) or "mnist" (IDX files under data_dir).
  std::string dataset = "synthetic";
  std::string data_dir;
  std::string out_dir = "runs";
  std::size_t eval_samples = 100;
  Binarization binarization = Binarization::Resample;
  /// Synthetic set sizes, or caps on the IDX sets (0 keeps every image).
  std::size_t train_size = 1000;
  std::size_t eval_size = 500;
  /// Training examples used for the logged train cost (0 for all).
  std::size_t train_eval_size = 500;
  std::size_t log_every = 100;
  std::size_t idb_hidden = 100;
  double idb_learning_rate = 0.001;
  bool checkpoint = true;
  /// Append per-row wall-clock times to timing.jsonl (kept out of the metrics files).
  bool timing = false;

  void validate() const;
  nlohmann::json to_json() const;
  /// Overlays the keys present in `j` onto `base`; unknown keys are an error.
  static ExperimentConfig from_json(const nlohmann::json& j, ExperimentConfig base);
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Full-size architectures on MNIST with the learning-rate sweep.
  static ExperimentConfig extended(Task task);
};

/// v' = momentum * v - lr * g; theta' = theta + v'. Velocity entries are created on demand.
void sgd_momentum_step(ValueMap& params, const GradMap& grads, ValueMap& velocity, double lr, double momentum);

struct MetricsRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  /// Mean minibatch cost since the previous row; absent on the initial row.
  std::optional<double> batch_cost;
  double train_cost = 0.0;
  double eval_nll = 0.0;
  double signal_mean = 0.0;
  double signal_var = 0.0;
  std::string status = "ok";

  nlohmann::json to_json() const;
};

struct RunResult {
  std::vector<MetricsRow> rows;
  double initial_train_cost = 0.0;
  double final_train_cost = 0.0;
  double final_eval_nll = 0.0;
  double best_eval_nll = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
  bool diverged = false;
  ValueMap params;
  BaselineState baselines;
  std::filesystem::path out_dir;
};

/// Train and eval sets for a config: synthetic generators or IDX files.
struct ExperimentData {
  ImageSet train;
  ImageSet eval;
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Trains one run, writing metrics.jsonl, metrics.csv, config.json and (optionally) a
/// checkpoint under `out_dir`. An empty `out_dir` skips all file output.
RunResult run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                         const std::filesystem::path& out_dir);
RunResult run_experiment(const ExperimentConfig& config);

/// Held-out NLL of `params` exactly as run_experiment logs it (same binarization and seeds).
double evaluate_eval_nll(const ExperimentConfig& config, const ExperimentData& data, const ValueMap& params);

struct SweepResult {
  std::vector<double> learning_rates;
  std::vector<RunResult> runs;
  std::size_t best = 0;  // index into runs
};

/// Index of the smallest finite value, ties to the smaller learning rate; throws if none.
std::size_t sweep_argmin(const std::vector<double>& learning_rates, const std::vector<double>& eval_nll);

/// One run per learning rate in lr_sweep under out_dir/lr_<rate>, plus summary.json.
SweepResult run_sweep(const ExperimentConfig& config);

struct Checkpoint {
  ValueMap params;
  BaselineState baselines;
  nlohmann::json config;
};

/// Writes <stem>.bin (raw float64 tensors) and <stem>.json (manifest).
void save_checkpoint(const std::filesystem::path& stem, const ValueMap& params, const BaselineState& baselines,
                     const nlohmann::json& config);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

/// Default dataset directory: $MUPROP_DATA_DIR, else "data".
std::filesystem::path default_data_dir();

}  // namespace muprop
