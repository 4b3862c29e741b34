#include "muprop/verify.hpp"

#include <cmath>

#include "muprop/fixtures.hpp"
#include "muprop/graph_io.hpp"
#include "muprop/oracle.hpp"

namespace muprop {

namespace {

bool unbiased_by_construction(EstimatorKind k) {
  return k == EstimatorKind::LR || k == EstimatorKind::MuProp || k == EstimatorKind::MuPropRollout;
}

}  // namespace

nlohmann::json verify_problem(const Problem& problem, const VerifyOptions& options) {
  const EnumerationReport exact = exact_expected_cost_and_grad(problem);
  double exact_norm_sq = 0.0;
  for (const auto& [id, g] : exact.exact_grad) exact_norm_sq += squared_norm(g);

  nlohmann::json out{{"configurations", exact.config_count},
                     {"exact_cost", exact.exact_cost},
                     {"exact_grad_norm", std::sqrt(exact_norm_sq)}};
  nlohmann::json rows = nlohmann::json::array();
  bool pass = true;
  for (EstimatorKind k : options.estimators) {
    const Moments m = exact_moments(EstimatorConfig{k}, problem);
    double bias_sq = 0.0;
    for (const auto& [id, g] : exact.exact_grad) bias_sq += squared_norm(m.mean.at(id) - g);
    const double rel = max_relative_error(m.mean, exact.exact_grad);
    nlohmann::json row{{"estimator", std::string(to_string(k))},
                       {"bias_norm", std::sqrt(bias_sq)},
                       {"relative_bias", rel},
                       {"variance", m.total_variance}};
    if (unbiased_by_construction(k)) {
      const bool ok = rel < options.tolerance;
      row["tolerance"] = options.tolerance;
      row["pass"] = ok;
      pass = pass && ok;
    } else {
      row["tolerance"] = nullptr;
      row["pass"] = nullptr;
    }
    rows.push_back(std::move(row));
  }
  out["estimators"] = std::move(rows);
  out["pass"] = pass;
  return out;
}

nlohmann::json verify_report(const VerifyOptions& options) {
  nlohmann::json problems = nlohmann::json::array();
  bool pass = true;
  auto add = [&](const fixtures::TestProblem& p) {
    nlohmann::json r = verify_problem(p.problem(), options);
    r["name"] = p.name;
    pass = pass && r["pass"].get<bool>();
    problems.push_back(std::move(r));
  };
  add(fixtures::single_unit(fixtures::UnitCost::Square));
  add(fixtures::single_unit(fixtures::UnitCost::Cube));
  for (const fixtures::TestProblem& p : fixtures::random_problem_family(options.seed, options.graphs)) add(p);
  return nlohmann::json{{"seed", options.seed},
                        {"graphs", options.graphs},
                        {"tolerance", options.tolerance},
                        {"problems", std::move(problems)},
                        {"pass", pass}};
}

Problem ProblemDocument::problem() const {
  const auto cost = graph.cost_node();
  if (!cost) throw Error("problem graph has no cost node");
  return Problem{graph, *cost, inputs, params};
}

ProblemDocument problem_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("graph")) throw Error("problem document needs a \"graph\" entry");
  ProblemDocument doc;
  doc.graph = graph_from_json(j.at("graph"));
  if (j.contains("inputs")) doc.inputs = values_from_json(j.at("inputs"));
  if (j.contains("params")) doc.params = values_from_json(j.at("params"));
  return doc;
}

}  // namespace muprop
