#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "muprop/estimators.hpp"

namespace muprop {

struct VerifyOptions {
  std::size_t graphs = 50;
  std::uint64_t seed = 2015;
  /// Unbiased estimators pass when their relative bias is below this.
  double tolerance = 1e-8;
  std::vector<EstimatorKind> estimators{EstimatorKind::LR, EstimatorKind::MuProp, EstimatorKind::MuPropRollout,
                                        EstimatorKind::ST, EstimatorKind::Half};
};

/// Exact bias and variance of every estimator against enumeration on one problem.
/// ST and 1/2 are biased by construction and are reported without a verdict.
nlohmann::json verify_problem(const Problem& problem, const VerifyOptions& options);

/// verify_problem over the random graph family plus the single-unit canonical cases,
/// with an overall "pass" that holds when every unbiased estimator passes everywhere.
nlohmann::json verify_report(const VerifyOptions& options);

/// Problem document: {"graph": graph_to_json(...), "inputs": {...}, "params": {...}}.
struct ProblemDocument {
  Graph graph;
  ValueMap inputs;
  ValueMap params;
  Problem problem() const;
};
ProblemDocument problem_from_json(const nlohmann::json& j);

}  // namespace muprop
