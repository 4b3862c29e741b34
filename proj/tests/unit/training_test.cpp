#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "muprop/training.hpp"
#include "support/temp_dir.hpp"

using namespace muprop;
using muprop::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.arch = "8-4-8";
  c.learning_rate = 0.2;
  c.batch_size = 10;
  c.steps = 30;
  c.train_size = 100;
  c.eval_size = 40;
  c.train_eval_size = 40;
  c.eval_samples = 5;
  c.log_every = 10;
  c.idb_hidden = 8;
  return c;
}

}  // namespace

TEST(SgdMomentum, TwoStepsOnUnitGradient) {
  ValueMap params{{0, Tensor::vector({0.0})}};
  const GradMap grads{{0, Tensor::vector({1.0})}};
  ValueMap velocity;
  sgd_momentum_step(params, grads, velocity, 0.1, 0.9);
  EXPECT_NEAR(params.at(0)[0], -0.1, 1e-15);
  sgd_momentum_step(params, grads, velocity, 0.1, 0.9);
  EXPECT_NEAR(velocity.at(0)[0], -0.19, 1e-15);
  EXPECT_NEAR(params.at(0)[0], -0.29, 1e-15);
}

TEST(SgdMomentum, ZeroMomentumIsPlainSgd) {
  ValueMap params{{0, Tensor::vector({1.0, 2.0})}};
  const GradMap grads{{0, Tensor::vector({0.5, -1.0})}};
  ValueMap velocity;
  for (int i = 0; i < 3; ++i) sgd_momentum_step(params, grads, velocity, 0.1, 0.0);
  EXPECT_NEAR(params.at(0)[0], 0.85, 1e-15);
  EXPECT_NEAR(params.at(0)[1], 2.3, 1e-15);
}

TEST(SgdMomentum, RejectsMismatches) {
  ValueMap params{{0, Tensor::vector({1.0, 2.0})}};
  ValueMap velocity;
  EXPECT_THROW(sgd_momentum_step(params, GradMap{{0, Tensor::vector({1.0})}}, velocity, 0.1, 0.9), Error);
  EXPECT_THROW(sgd_momentum_step(params, GradMap{{7, Tensor::vector({1.0, 1.0})}}, velocity, 0.1, 0.9), Error);
}

TEST(Config, JsonRoundTripAndOverlay) {
  ExperimentConfig c = small_config();
  c.task = Task::Variational;
  c.arch = "4-16";
  c.estimator = EstimatorConfig{EstimatorKind::LR, flags_from_string("c,vn,idb"), XbarChoice::Mean};
  c.lr_sweep = {0.1, 0.01};
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  const ExperimentConfig overlay = ExperimentConfig::from_json(nlohmann::json{{"seed", 9}}, c);
  EXPECT_EQ(overlay.seed, 9u);
  EXPECT_EQ(overlay.arch, "4-16");
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json{{"learning_rat", 0.1}}), Error);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json{{"batch_size", "ten"}}), Error);
  EXPECT_THROW(ExperimentConfig::from_json(nlohmann::json::array()), Error);
  ExperimentConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig{};
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = ExperimentConfig{};
  c.arch = "8";
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, ExtendedPresets) {
  const ExperimentConfig s = ExperimentConfig::extended(Task::StructuredPrediction);
  EXPECT_EQ(s.arch, "392-200-200-392");
  EXPECT_EQ(s.dataset, "mnist");
  EXPECT_FALSE(s.lr_sweep.empty());
  EXPECT_EQ(ExperimentConfig::extended(Task::Variational).arch, "200-784");
}

TEST(Training, ZeroEpochsLogsInitialRowOnly) {
  ExperimentConfig c = small_config();
  c.steps = 0;
  c.epochs = 0;
  const RunResult r = run_experiment(c, load_experiment_data(c), {});
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].step, 0u);
  EXPECT_FALSE(r.rows[0].batch_cost.has_value());
  EXPECT_EQ(r.steps, 0u);
}

TEST(Training, StepsAndRowsFollowConfig) {
  const ExperimentConfig c = small_config();
  const RunResult r = run_experiment(c, load_experiment_data(c), {});
  EXPECT_EQ(r.steps, 30u);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows.back().step, 30u);
  EXPECT_EQ(r.rows[1].epoch, 0u);
  EXPECT_EQ(r.rows[2].epoch, 1u);
  EXPECT_FALSE(r.diverged);
  for (const MetricsRow& row : r.rows) EXPECT_EQ(row.status, "ok");
}

TEST(Training, RunsAreByteIdentical) {
  TempDir dir;
  ExperimentConfig c = small_config();
  c.estimator = EstimatorConfig{EstimatorKind::MuProp, flags_from_string("c,vn,idb")};
  const ExperimentData data = load_experiment_data(c);
  run_experiment(c, data, dir / "a");
  run_experiment(c, data, dir / "b");
  for (const char* f : {"metrics.jsonl", "metrics.csv", "config.json", "checkpoint.bin", "checkpoint.json"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
  EXPECT_FALSE(std::filesystem::exists(dir / "a" / "timing.jsonl"));
  c.seed = 2;
  run_experiment(c, data, dir / "c");
  EXPECT_NE(slurp(dir / "a" / "metrics.jsonl"), slurp(dir / "c" / "metrics.jsonl"));
}

TEST(Training, CsvMatchesJsonl) {
  TempDir dir;
  const ExperimentConfig c = small_config();
  run_experiment(c, load_experiment_data(c), dir.path());
  std::ifstream jl(dir / "metrics.jsonl"), csv(dir / "metrics.csv");
  std::string jline, cline;
  std::getline(csv, cline);
  EXPECT_EQ(cline, "step,epoch,batch_cost,train_cost,eval_nll,signal_mean,signal_var,status");
  std::size_t rows = 0;
  while (std::getline(jl, jline) && std::getline(csv, cline)) {
    const auto j = nlohmann::json::parse(jline);
    std::vector<std::string> cells;
    std::stringstream ss(cline);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    ASSERT_EQ(cells.size(), 8u);
    EXPECT_EQ(std::stoul(cells[0]), j.at("step").get<std::size_t>());
    EXPECT_EQ(std::stod(cells[4]), j.at("eval_nll").get<double>());
    ++rows;
  }
  EXPECT_EQ(rows, 4u);
}

TEST(Training, CheckpointReproducesEvalNll) {
  TempDir dir;
  ExperimentConfig c = small_config();
  c.estimator = EstimatorConfig{EstimatorKind::LR, flags_from_string("c,idb")};
  const ExperimentData data = load_experiment_data(c);
  const RunResult r = run_experiment(c, data, dir.path());
  const Checkpoint ck = load_checkpoint(dir / "checkpoint");
  EXPECT_EQ(ck.params, r.params);
  EXPECT_EQ(ck.baselines.moving_mean, r.baselines.moving_mean);
  EXPECT_EQ(ck.baselines.idb.w1, r.baselines.idb.w1);
  const ExperimentConfig restored = ExperimentConfig::from_json(ck.config);
  EXPECT_NEAR(evaluate_eval_nll(restored, data, ck.params), r.final_eval_nll, 1e-12);
}

TEST(Training, CheckpointErrors) {
  TempDir dir;
  EXPECT_THROW(load_checkpoint(dir / "missing"), Error);
  std::ofstream(dir / "bad.json") << "{\"format\": \"other\"}";
  EXPECT_THROW(load_checkpoint(dir / "bad"), Error);
}

TEST(Training, DimensionMismatchIsReported) {
  ExperimentConfig c = small_config();
  c.arch = "6-4-6";
  EXPECT_THROW(run_experiment(c, load_experiment_data(small_config()), {}), Error);
}

TEST(Training, DivergenceIsLoggedNotThrown) {
  ExperimentConfig c = small_config();
  c.learning_rate = 1e6;
  c.momentum = 0.0;
  c.estimator = EstimatorConfig{EstimatorKind::LR};
  const RunResult r = run_experiment(c, load_experiment_data(c), {});
  if (r.diverged) {
    EXPECT_EQ(r.rows.back().status, "diverged");
    EXPECT_LT(r.steps, 30u);
  }
}

TEST(Training, MuPropCenteredImprovesAcrossSeeds) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    ExperimentConfig c = small_config();
    c.seed = seed;
    c.steps = 200;
    c.log_every = 200;
    const RunResult r = run_experiment(c, load_experiment_data(c), {});
    EXPECT_LT(r.final_train_cost, r.initial_train_cost) << "seed " << seed;
  }
}

TEST(Sweep, ArgminPrefersSmallerRateOnTies) {
  EXPECT_EQ(sweep_argmin({0.1, 0.01, 0.001}, {3.0, 2.0, 2.0}), 2u);
  EXPECT_EQ(sweep_argmin({0.001, 0.1}, {2.0, 2.0}), 0u);
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_EQ(sweep_argmin({0.1, 0.01}, {inf, 5.0}), 1u);
  EXPECT_THROW(sweep_argmin({0.1, 0.01}, {inf, std::nan("")}), Error);
  EXPECT_THROW(sweep_argmin({0.1}, {1.0, 2.0}), Error);
}

TEST(Sweep, WritesPerRateDirectoriesAndSummary) {
  TempDir dir;
  ExperimentConfig c = small_config();
  c.steps = 10;
  c.lr_sweep = {0.1, 0.03};
  c.out_dir = dir.path().string();
  const SweepResult s = run_sweep(c);
  ASSERT_EQ(s.runs.size(), 2u);
  EXPECT_TRUE(std::filesystem::exists(dir / "lr_0.1" / "metrics.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir / "lr_0.03" / "metrics.jsonl"));
  const auto summary = nlohmann::json::parse(slurp(dir / "summary.json"));
  EXPECT_EQ(summary.at("selected_learning_rate").get<double>(), s.learning_rates[s.best]);
  EXPECT_EQ(summary.at("runs").size(), 2u);
}
