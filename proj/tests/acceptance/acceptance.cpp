// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: muprop_acceptance [--criterion N]   (all criteria when omitted)

#include <chrono>
#include <cstdarg>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "muprop/fixtures.hpp"
#include "muprop/oracle.hpp"
#include "muprop/training.hpp"
#include "support/chain_closed_form.hpp"

using namespace muprop;
using fixtures::TestProblem;
using fixtures::UnitCost;

namespace {

constexpr std::uint64_t kFamilySeed = 2015;
constexpr std::size_t kFamilySize = 50;

constexpr double kUnbiasedTol = 1e-8;         // criterion 1
constexpr double kRuntimeLimit1 = 120.0;      // seconds
constexpr double kBiasTol = 1e-12;            // criterion 2 enumeration values
constexpr double kVarianceTol = 1e-12;        // criterion 3 exact variances
constexpr std::size_t kVarianceSamples = 10000;
constexpr double kVarianceWinFraction = 0.9;
constexpr std::size_t kFdGraphs = 100;        // criterion 4
constexpr double kFdStep = 1e-5;
constexpr double kFdTol = 1e-6;
constexpr std::size_t kChains = 20;           // criterion 5
constexpr std::size_t kSamplesPerChain = 5;
constexpr double kClosedFormTol = 1e-10;
constexpr std::size_t kTrainSeeds = 10;       // criterion 6
constexpr std::size_t kTrainSteps = 2000;
constexpr double kTrainLr = 0.05;
constexpr std::size_t kTrainBatch = 10;
constexpr std::size_t kRequiredWins = 8;
constexpr double kRuntimeLimit6 = 300.0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const char* fmt, ...) __attribute__((format(printf, 1, 2)));
void note(const char* fmt, ...) {
  std::printf("    ");
  va_list args;
  va_start(args, fmt);
  std::vprintf(fmt, args);
  va_end(args);
  std::printf("\n");
}

bool verdict(int n, bool pass, const std::string& summary) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", n, summary.c_str());
  std::fflush(stdout);
  return pass;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double theta_grad(const TestProblem& p, const GradMap& g) { return g.at(*p.graph.find("theta"))[0]; }

// ---------------------------------------------------------------------------

bool criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto family = fixtures::random_problem_family(kFamilySeed, kFamilySize);
  double worst[3] = {0, 0, 0};
  const EstimatorKind kinds[3] = {EstimatorKind::LR, EstimatorKind::MuProp, EstimatorKind::MuPropRollout};
  std::size_t failures = 0, categorical = 0, deep = 0;
  for (const TestProblem& p : family) {
    const Problem pr = p.problem();
    const GradMap exact = exact_expected_cost_and_grad(pr).exact_grad;
    bool has_cat = false;
    for (NodeId id : p.graph.stochastic_nodes()) has_cat |= p.graph.node(id).dist == Dist::Categorical;
    categorical += has_cat;
    int depth = 0;
    for (int d : stochastic_layers(p.graph)) depth = std::max(depth, d);
    deep += depth > 1;
    for (int k = 0; k < 3; ++k) {
      const double e = max_relative_error(estimator_expectation(EstimatorConfig{kinds[k]}, pr), exact);
      worst[k] = std::max(worst[k], e);
      failures += !(e < kUnbiasedTol);
    }
  }
  const double elapsed = seconds_since(t0);
  note("family: %zu graphs, %zu with categorical units, %zu with >1 stochastic layer", family.size(), categorical,
       deep);
  note("worst relative error: lr %.3g, muprop %.3g, muprop_rollout %.3g (tol %.0e)", worst[0], worst[1], worst[2],
       kUnbiasedTol);
  return verdict(1, failures == 0 && elapsed < kRuntimeLimit1,
                 fmt("unbiasedness on %.0f graphs, %.0f failures, %.2f s (limit %.0f s)", double(family.size()),
                     double(failures), elapsed, kRuntimeLimit1));
}

bool criterion_2() {
  const TestProblem cube = fixtures::single_unit(UnitCost::Cube);
  const TestProblem square = fixtures::single_unit(UnitCost::Square);
  const double exact = theta_grad(cube, exact_expected_cost_and_grad(cube.problem()).exact_grad);
  const double st = theta_grad(cube, estimator_expectation(EstimatorConfig{EstimatorKind::ST}, cube.problem()));
  const double half = theta_grad(cube, estimator_expectation(EstimatorConfig{EstimatorKind::Half}, cube.problem()));
  const double exact_sq = theta_grad(square, exact_expected_cost_and_grad(square.problem()).exact_grad);
  const double half_sq =
      theta_grad(square, estimator_expectation(EstimatorConfig{EstimatorKind::Half}, square.problem()));
  note("f = x^3: exact %.17g, ST %.17g, 1/2 %.17g", exact, st, half);
  note("f = x^2: exact %.17g, 1/2 %.17g", exact_sq, half_sq);
  const bool pass = std::abs(exact - 0.25) < kBiasTol && std::abs(st - 0.375) < kBiasTol &&
                    std::abs(half - 0.375) < kBiasTol && std::abs(exact_sq - 0.25) < kBiasTol &&
                    half_sq == exact_sq;
  return verdict(2, pass, fmt("x^3 bias ST %.3g, 1/2 %.3g; x^2 1/2 error %.3g", st - exact, half - exact,
                              half_sq - exact_sq));
}

bool criterion_3() {
  const TestProblem sq = fixtures::single_unit(UnitCost::Square);
  const double v_lr = exact_moments(EstimatorConfig{EstimatorKind::LR}, sq.problem()).total_variance;
  const double v_mp = exact_moments(EstimatorConfig{EstimatorKind::MuProp}, sq.problem()).total_variance;
  note("single unit x^2: exact variance LR %.17g, MuProp %.17g, ratio %.6g", v_lr, v_mp, v_lr / v_mp);
  const bool canonical =
      std::abs(v_lr - 0.0625) < kVarianceTol && std::abs(v_mp - 0.015625) < kVarianceTol && v_lr >= 4.0 * v_mp;

  const auto family = fixtures::random_problem_family(kFamilySeed, kFamilySize);
  const BaselineFlags c{true, false, false};
  std::size_t wins = 0;
  double log_ratio_sum = 0.0;
  for (std::size_t i = 0; i < family.size(); ++i) {
    const Problem pr = family[i].problem();
    BaselineState s_lr = BaselineState::create(family[i].graph);
    BaselineState s_mp = BaselineState::create(family[i].graph);
    const std::uint64_t seed = derive_key(kFamilySeed, 0x3A, i);
    const double lr = empirical_moments(EstimatorConfig{EstimatorKind::LR, c}, pr, kVarianceSamples, seed, &s_lr)
                          .total_variance;
    const double mp = empirical_moments(EstimatorConfig{EstimatorKind::MuProp, c}, pr, kVarianceSamples, seed, &s_mp)
                          .total_variance;
    wins += mp < lr;
    log_ratio_sum += std::log(lr / mp);
  }
  const double fraction = static_cast<double>(wins) / static_cast<double>(family.size());
  note("family: MuProp-C variance below LR-C on %zu/%zu graphs (n = %zu), geometric-mean ratio %.3g", wins,
       family.size(), kVarianceSamples, std::exp(log_ratio_sum / static_cast<double>(family.size())));
  return verdict(3, canonical && fraction >= kVarianceWinFraction,
                 fmt("LR %.6g vs MuProp %.6g exact; MuProp-C wins %.0f%% of graphs (need %.0f%%)", v_lr, v_mp,
                     100 * fraction, 100 * kVarianceWinFraction));
}

bool criterion_4() {
  double worst = 0.0;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < kFdGraphs; ++i) {
    // Half purely deterministic graphs, half stochastic graphs run in mean-field mode.
    const TestProblem p = i % 2 == 0 ? fixtures::random_deterministic_problem(i)
                                     : fixtures::random_problem(derive_key(kFamilySeed, 0xFD, i));
    const double e = finite_difference_check(p.graph, p.cost, p.inputs, p.params, kFdStep);
    worst = std::max(worst, e);
    failures += !(e < kFdTol);
  }
  return verdict(4, failures == 0,
                 fmt("finite differences on %.0f graphs, worst relative error %.3g (tol %.0e, step %.0e)",
                     double(kFdGraphs), worst, kFdTol, kFdStep));
}

bool criterion_5() {
  double worst = 0.0, worst_last = 0.0, worst_adjusted = 0.0, worst_expectation = 0.0;
  for (std::size_t layers : {2u, 3u}) {
    for (std::size_t s = 0; s < kChains; ++s) {
      const TestProblem p = fixtures::bernoulli_chain(derive_key(0xC5, layers, s), std::vector<std::size_t>(layers, 2));
      const Problem pr = p.problem();
      const testing::ChainView cv = testing::view_chain(p, layers);
      GradMap closed_mean;
      for_each_configuration(p.graph, p.inputs, p.params, [&](const Trace& t, double prob) {
        for (auto& [id, g] : testing::chain_closed_form(cv, testing::chain_sample(cv, t))) {
          auto it = closed_mean.try_emplace(id, Tensor::zeros_like(g)).first;
          it->second += g * prob;
        }
      });
      worst_expectation = std::max(
          worst_expectation,
          max_relative_error(closed_mean, estimator_expectation(EstimatorConfig{EstimatorKind::MuProp}, pr)));
      for (std::size_t r = 0; r < kSamplesPerChain; ++r) {
        const Trace t = sample_trace(pr, derive_key(s, r));
        const auto h = testing::chain_sample(cv, t);
        const GradMap alg = muprop_estimate(pr, t).grads;
        const GradMap closed = testing::chain_closed_form(cv, h);
        worst = std::max(worst, max_relative_error(alg, closed));
        worst_last = std::max({worst_last, relative_error(alg.at(cv.w_id.back()), closed.at(cv.w_id.back())),
                               relative_error(alg.at(cv.b_id.back()), closed.at(cv.b_id.back())),
                               relative_error(alg.at(cv.v_id), closed.at(cv.v_id))});
        for (std::size_t i = 0; i < layers; ++i) {
          const double innovation = testing::chain_innovation(cv, h, i);
          const auto mu = testing::layer_mean(cv, i, h[i]);
          Tensor gb = alg.at(cv.b_id[i]);
          for (std::size_t row = 0; row < gb.size(); ++row) gb[row] += (h[i + 1][row] - mu[row]) * innovation;
          worst_adjusted = std::max(worst_adjusted, relative_error(gb, closed.at(cv.b_id[i])));
        }
      }
    }
  }
  note("per-sample worst relative error, all parameters: %.3g (tol %.0e)", worst, kClosedFormTol);
  note("per-sample worst relative error, last stochastic layer and output: %.3g", worst_last);
  note("closed form minus zero-mean innovation vs algorithm, bias rows: %.3g", worst_adjusted);
  note("expectations under enumeration agree: worst relative error %.3g", worst_expectation);
  note("the layered closed form adds score_{i+1} * sum_k g_{k+1}(mu_{k+1}(x_k) - x_{k+1}) for layers below the last,");
  note("a zero-mean term, so the two agree in expectation but not per sample on chains deeper than one layer");
  return verdict(5, worst < kClosedFormTol,
                 fmt("per-sample closed-form equivalence on %.0f chains of 2 and 3 layers, worst %.3g (tol %.0e)",
                     double(2 * kChains), worst, kClosedFormTol));
}

ExperimentConfig training_config(std::uint64_t seed, const std::string& estimator) {
  ExperimentConfig c;
  c.task = Task::StructuredPrediction;
  c.arch = "8-4-8";
  c.dataset = "synthetic";
  c.learning_rate = kTrainLr;
  c.batch_size = kTrainBatch;
  c.steps = kTrainSteps;
  c.log_every = kTrainSteps;
  c.checkpoint = false;
  c.seed = seed;
  const auto dash = estimator.find('-');
  c.estimator.kind = estimator_from_string(estimator.substr(0, dash));
  c.estimator.flags = flags_from_string(dash == std::string::npos ? "" : estimator.substr(dash + 1));
  return c;
}

bool criterion_6() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::string> estimators{"lr",   "lr-c",     "lr-c-vn-idb",      "muprop",
                                            "muprop-c", "muprop_rollout-c", "st", "half"};
  std::vector<double> final_lr_c(kTrainSeeds), final_mp_c(kTrainSeeds);
  std::size_t non_improving = 0;
  for (const std::string& e : estimators) {
    std::size_t improved = 0;
    double mean_nll = 0.0;
    for (std::size_t s = 0; s < kTrainSeeds; ++s) {
      const ExperimentConfig c = training_config(s + 1, e);
      const RunResult r = run_experiment(c, load_experiment_data(c), {});
      improved += !r.diverged && r.final_train_cost < r.initial_train_cost;
      mean_nll += r.final_eval_nll / static_cast<double>(kTrainSeeds);
      if (e == "lr-c") final_lr_c[s] = r.final_eval_nll;
      if (e == "muprop-c") final_mp_c[s] = r.final_eval_nll;
    }
    non_improving += kTrainSeeds - improved;
    note("%-18s improved on %zu/%zu seeds, mean test NLL %.4f", e.c_str(), improved, kTrainSeeds, mean_nll);
  }
  std::size_t wins = 0;
  for (std::size_t s = 0; s < kTrainSeeds; ++s) wins += final_mp_c[s] < final_lr_c[s];
  const double elapsed = seconds_since(t0);
  note("lr %.2g, batch %zu, momentum 0.9, %zu steps", kTrainLr, kTrainBatch, kTrainSteps);
  return verdict(6, wins >= kRequiredWins && non_improving == 0 && elapsed < kRuntimeLimit6,
                 fmt("MuProp-C beats LR-C on %.0f/%.0f seeds (need %.0f), %.0f non-improving runs", double(wins),
                     double(kTrainSeeds), double(kRequiredWins), double(non_improving)) +
                     fmt(", %.1f s (limit %.0f s)", elapsed, kRuntimeLimit6));
}

bool skipped_any = false;

bool criterion_7() {
  const char* run = std::getenv("MUPROP_RUN_EXTENDED");
  if (run == nullptr || std::string(run) != "1") {
    std::printf("SKIP criterion 7: full-MNIST reproduction is not acceptance-gating; set MUPROP_RUN_EXTENDED=1 with "
                "MUPROP_DATA_DIR pointing at the IDX files to run it (multi-hour)\n");
    skipped_any = true;
    return true;
  }
  auto best_of = [](Task task, const std::string& estimator, const std::string& out) {
    ExperimentConfig c = ExperimentConfig::extended(task);
    const auto dash = estimator.find('-');
    c.estimator.kind = estimator_from_string(estimator.substr(0, dash));
    c.estimator.flags = flags_from_string(dash == std::string::npos ? "" : estimator.substr(dash + 1));
    c.out_dir = out;
    const SweepResult s = run_sweep(c);
    return s.runs[s.best];
  };
  const RunResult sp_mp = best_of(Task::StructuredPrediction, "muprop-c", "runs/extended/sp_muprop_c");
  const RunResult sp_lr = best_of(Task::StructuredPrediction, "lr-c", "runs/extended/sp_lr_c");
  const RunResult sbn_mp = best_of(Task::Variational, "muprop-c", "runs/extended/sbn_muprop_c");
  const RunResult sbn_st = best_of(Task::Variational, "st", "runs/extended/sbn_st");
  // Convergence speed: eval NLL at the first logged row after initialization.
  const double early_mp = sp_mp.rows.size() > 1 ? sp_mp.rows[1].eval_nll : sp_mp.final_eval_nll;
  const double early_lr = sp_lr.rows.size() > 1 ? sp_lr.rows[1].eval_nll : sp_lr.final_eval_nll;
  note("structured MuProp-C best %.2f (target 57.7 +- 3), LR-C best %.2f", sp_mp.best_eval_nll, sp_lr.best_eval_nll);
  note("SBN MuProp-C bound %.2f, ST bound %.2f", sbn_mp.best_eval_nll, sbn_st.best_eval_nll);
  const bool pass = std::abs(sp_mp.best_eval_nll - 57.7) <= 3.0 && early_mp < early_lr &&
                    sbn_mp.best_eval_nll < sbn_st.best_eval_nll;
  return verdict(7, pass, fmt("MuProp-C %.2f vs 57.7, early NLL MuProp %.2f < LR %.2f", sp_mp.best_eval_nll,
                              early_mp, early_lr));
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool criterion_8() {
  const std::filesystem::path root = std::filesystem::temp_directory_path() / "muprop_acceptance_determinism";
  std::filesystem::remove_all(root);
  std::size_t identical = 0, total = 0;
  const std::vector<std::pair<Task, std::string>> cases{
      {Task::StructuredPrediction, "muprop-c-vn-idb"}, {Task::StructuredPrediction, "lr-c"},
      {Task::StructuredPrediction, "st"},              {Task::Variational, "muprop_rollout-c"},
      {Task::Variational, "half"}};
  for (std::size_t i = 0; i < cases.size(); ++i) {
    ExperimentConfig c = training_config(7 + i, cases[i].second);
    c.task = cases[i].first;
    c.arch = c.task == Task::Variational ? "4-16" : "8-4-8";
    c.steps = 200;
    c.log_every = 50;
    c.learning_rate = 0.05;
    c.checkpoint = true;
    c.eval_samples = 10;
    const ExperimentData data = load_experiment_data(c);
    const auto a = root / (std::to_string(i) + "a"), b = root / (std::to_string(i) + "b");
    run_experiment(c, data, a);
    run_experiment(c, data, b);
    for (const char* f : {"metrics.jsonl", "metrics.csv", "checkpoint.bin"}) {
      ++total;
      const std::string x = slurp(a / f);
      identical += !x.empty() && x == slurp(b / f);
    }
  }
  std::filesystem::remove_all(root);
  return verdict(8, identical == total,
                 fmt("%.0f/%.0f output files byte-identical across repeated runs", double(identical), double(total)));
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<bool()>> criteria{criterion_1, criterion_2, criterion_3, criterion_4,
                                                    criterion_5, criterion_6, criterion_7, criterion_8};
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--criterion" && i + 1 < argc) {
      selected.push_back(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--criterion N]...\n", argv[0]);
      return 2;
    }
  }
  if (selected.empty())
    for (int n = 1; n <= static_cast<int>(criteria.size()); ++n) selected.push_back(n);
  bool all = true;
  for (int n : selected) {
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "no criterion %d\n", n);
      return 2;
    }
    try {
      all = criteria[static_cast<std::size_t>(n - 1)]() && all;
    } catch (const std::exception& e) {
      all = verdict(n, false, std::string("error: ") + e.what()) && all;
    }
  }
  if (!all) return 1;
  // ctest maps this to "skipped" when every selected criterion was skipped.
  return skipped_any && selected.size() == 1 ? 77 : 0;
}
