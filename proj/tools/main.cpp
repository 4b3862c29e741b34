#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "muprop/graph_io.hpp"
#include "muprop/training.hpp"
#include "muprop/verify.hpp"

using namespace muprop;
using nlohmann::json;

namespace {

/// Flags shared by train and graph; unset options leave the config untouched.
struct Overrides {
  std::string config_path;
  bool extended = false;
  std::optional<std::string> task, arch, estimator, flags, xbar, dataset, data_dir, out_dir, binarization;
  std::optional<double> lr, momentum;
  std::vector<double> sweep;
  std::optional<std::size_t> batch, epochs, steps, eval_samples, log_every;
  std::optional<std::uint64_t> seed;
  bool timing = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    app.add_flag("--extended", extended, "Full-size MNIST architectures with the learning-rate sweep");
    app.add_option("--task", task, "structured_prediction | variational");
    app.add_option("--arch", arch, "Layer widths, e.g. 8-4-8, 392-200-200-392, 200x10-784");
    app.add_option("--estimator", estimator, "lr | muprop | muprop_rollout | st | half");
    app.add_option("--flags", flags, "Baseline flags: any of c,vn,idb (or none)");
    app.add_option("--xbar", xbar, "Multinomial 1/2 fixed point: half | inverse_k | mean");
    app.add_option("--lr", lr, "Learning rate");
    app.add_option("--sweep", sweep, "Learning rates to sweep (comma separated)")->delimiter(',');
    app.add_option("--momentum", momentum, "SGD momentum");
    app.add_option("--batch", batch, "Minibatch size");
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--steps", steps, "Stop after this many updates (overrides --epochs)");
    app.add_option("--seed", seed, "Run seed");
    app.add_option("--dataset", dataset, "synthetic | mnist");
    app.add_option("--data-dir", data_dir, "Directory holding the IDX files (default $MUPROP_DATA_DIR)");
    app.add_option("--out-dir", out_dir, "Output directory for metrics and checkpoints");
    app.add_option("--eval-samples", eval_samples, "Samples m for held-out evaluation");
    app.add_option("--binarization", binarization, "resample | threshold");
    app.add_option("--log-every", log_every, "Steps between metrics rows");
    app.add_flag("--timing", timing, "Record wall-clock times in timing.jsonl");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c;
    if (task) c.task = task_from_string(*task);
    if (extended) {
      const auto t = c.task;
      c = ExperimentConfig::extended(t);
    }
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      json j;
      try {
        j = json::parse(in);
      } catch (const json::exception& e) {
        throw Error("cannot parse " + config_path + ": " + e.what());
      }
      c = ExperimentConfig::from_json(j, c);
    }
    if (task) c.task = task_from_string(*task);
    if (arch) c.arch = *arch;
    if (estimator) c.estimator.kind = estimator_from_string(*estimator);
    if (flags) c.estimator.flags = flags_from_string(*flags);
    if (xbar) c.estimator.xbar = xbar_from_string(*xbar);
    if (lr) c.learning_rate = *lr;
    if (!sweep.empty()) c.lr_sweep = sweep;
    if (momentum) c.momentum = *momentum;
    if (batch) c.batch_size = *batch;
    if (epochs) c.epochs = *epochs;
    if (steps) c.steps = *steps;
    if (seed) c.seed = *seed;
    if (dataset) c.dataset = *dataset;
    if (data_dir) c.data_dir = *data_dir;
    if (out_dir) c.out_dir = *out_dir;
    if (eval_samples) c.eval_samples = *eval_samples;
    if (binarization) c.binarization = binarization_from_string(*binarization);
    if (log_every) c.log_every = *log_every;
    if (timing) c.timing = true;
    c.validate();
    return c;
  }
};

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json run_summary(const RunResult& r) {
  return json{{"out_dir", r.out_dir.string()},
              {"steps", r.steps},
              {"diverged", r.diverged},
              {"initial_train_cost", finite_or_null(r.initial_train_cost)},
              {"final_train_cost", finite_or_null(r.final_train_cost)},
              {"final_eval_nll", finite_or_null(r.final_eval_nll)},
              {"best_eval_nll", finite_or_null(r.best_eval_nll)},
              {"best_step", r.best_step}};
}

int cmd_train(const Overrides& o) {
  const ExperimentConfig c = o.resolve();
  if (!c.lr_sweep.empty()) {
    const SweepResult s = run_sweep(c);
    json runs = json::array();
    for (std::size_t i = 0; i < s.runs.size(); ++i) {
      json r = run_summary(s.runs[i]);
      r["learning_rate"] = s.learning_rates[i];
      runs.push_back(std::move(r));
    }
    std::cout << json{{"runs", runs}, {"selected_learning_rate", s.learning_rates[s.best]}}.dump(2) << '\n';
    return 0;
  }
  const RunResult r = run_experiment(c);
  std::cout << run_summary(r).dump(2) << '\n';
  return r.diverged ? 3 : 0;
}

int cmd_graph(const Overrides& o, std::size_t samples, const std::string& out) {
  const ExperimentConfig c = o.resolve();
  const Model m = build_model(c.task, LayerSpec::parse(c.arch), samples);
  const std::string text = graph_to_json(m.graph).dump(2);
  if (out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream(out) << text << '\n';
  }
  return 0;
}

int cmd_verify(const VerifyOptions& options, const std::string& problem_path, const std::string& out) {
  json report;
  if (problem_path.empty()) {
    report = verify_report(options);
  } else {
    std::ifstream in(problem_path);
    const ProblemDocument doc = problem_from_json(json::parse(in));
    report = verify_problem(doc.problem(), options);
    report["name"] = problem_path;
  }
  const std::string text = report.dump(2);
  if (out.empty()) {
    std::cout << text << '\n';
  } else {
    std::ofstream(out) << text << '\n';
    std::cout << "verify: " << (report["pass"].get<bool>() ? "pass" : "FAIL") << " (" << out << ")\n";
  }
  return report["pass"].get<bool>() ? 0 : 1;
}

int cmd_eval(const std::string& stem, std::optional<std::size_t> eval_samples, std::optional<std::string> data_dir) {
  const Checkpoint ck = load_checkpoint(stem);
  ExperimentConfig c = ExperimentConfig::from_json(ck.config);
  if (eval_samples) c.eval_samples = *eval_samples;
  if (data_dir) c.data_dir = *data_dir;
  const double nll = evaluate_eval_nll(c, load_experiment_data(c), ck.params);
  std::cout << json{{"checkpoint", stem}, {"eval_samples", c.eval_samples}, {"eval_nll", finite_or_null(nll)}}.dump(2)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MuProp gradient estimators for stochastic computation graphs"};
  app.require_subcommand(1);

  Overrides train_opts;
  CLI::App* train = app.add_subcommand("train", "Train a model (or sweep learning rates with --sweep)");
  train_opts.attach(*train);

  Overrides graph_opts;
  std::size_t graph_samples = 1;
  std::string graph_out;
  CLI::App* graph = app.add_subcommand("graph", "Dump a model graph as JSON");
  graph_opts.attach(*graph);
  graph->add_option("--samples", graph_samples, "Sample count m for the structured predictor");
  graph->add_option("-o,--output", graph_out, "Write to a file instead of stdout");

  VerifyOptions verify_opts;
  std::string verify_problem_path, verify_out;
  std::vector<std::string> verify_estimators;
  CLI::App* verify = app.add_subcommand("verify", "Exact bias and variance report for every estimator");
  verify->add_option("--graphs", verify_opts.graphs, "Random graphs in the family");
  verify->add_option("--seed", verify_opts.seed, "Family seed");
  verify->add_option("--tolerance", verify_opts.tolerance, "Relative bias tolerance for unbiased estimators");
  verify->add_option("--estimators", verify_estimators, "Subset of lr,muprop,muprop_rollout,st,half")->delimiter(',');
  verify->add_option("--problem", verify_problem_path, "Verify one problem document instead of the family")
      ->check(CLI::ExistingFile);
  verify->add_option("-o,--output", verify_out, "Write the report to a file");

  std::string eval_stem;
  std::optional<std::size_t> eval_samples;
  std::optional<std::string> eval_data_dir;
  CLI::App* eval = app.add_subcommand("eval", "Held-out NLL of a saved checkpoint");
  eval->add_option("--checkpoint", eval_stem, "Checkpoint stem, e.g. runs/checkpoint")->required();
  eval->add_option("--eval-samples", eval_samples, "Override the sample count m");
  eval->add_option("--data-dir", eval_data_dir, "Override the dataset directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_opts);
    if (*graph) return cmd_graph(graph_opts, graph_samples, graph_out);
    if (*verify) {
      if (!verify_estimators.empty()) {
        verify_opts.estimators.clear();
        for (const std::string& e : verify_estimators) verify_opts.estimators.push_back(estimator_from_string(e));
      }
      return cmd_verify(verify_opts, verify_problem_path, verify_out);
    }
    if (*eval) return cmd_eval(eval_stem, eval_samples, eval_data_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
