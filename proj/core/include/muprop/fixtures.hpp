#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "muprop/estimators.hpp"

namespace muprop::fixtures {

/// A self-contained graph with bound inputs and parameters.
struct TestProblem {
  Graph graph;
  NodeId cost = -1;
  ValueMap inputs;
  ValueMap params;
  std::string name;

  Problem problem() const { return Problem{graph, cost, inputs, params}; }
};

enum class UnitCost { Linear, Square, Cube, Constant };

/// One Bernoulli unit with logit parameter theta and cost f(x).
/// Constant cost uses `constant` as c.
TestProblem single_unit(UnitCost cost, double logit = 0.0, double constant = 0.0);

/// One Bernoulli unit with f(x) = a x^2 + b x + c.
TestProblem single_unit_quadratic(double a, double b, double c, double logit = 0.0);

/// One categorical unit with k classes and f(x) = x_1 (first class indicator).
TestProblem single_categorical(std::vector<double> logits);

/// Independent Bernoulli units with f(x) = prod_i x_i.
TestProblem independent_product(std::vector<double> logits);

struct RandomFamilyOptions {
  int min_layers = 1;
  int max_layers = 3;
  bool allow_categorical = true;
  bool allow_branches = true;
  bool chains_only = false;
  std::size_t max_binary_units = 10;
  std::size_t max_categorical_cells = 12;
  std::size_t max_configurations = 4096;
};

/// Random stochastic graph: 1-3 stochastic layers of Bernoulli and/or categorical units,
/// either a chain or a DAG with one two-node layer, optional tanh hidden layers, and a
/// smooth cost that may read several layers.
TestProblem random_problem(std::uint64_t seed, const RandomFamilyOptions& options = {});

std::vector<TestProblem> random_problem_family(std::uint64_t seed, std::size_t count,
                                               const RandomFamilyOptions& options = {});

/// Random purely deterministic graph drawing on the whole op vocabulary.
TestProblem random_deterministic_problem(std::uint64_t seed);

/// Layered Bernoulli chain x0 -> h1 -> ... -> hn -> f with f = sum((V hn + c - t)^2).
/// Parameter nodes are created in the order W1, b1, ..., Wn, bn, V, c.
TestProblem bernoulli_chain(std::uint64_t seed, const std::vector<std::size_t>& widths, std::size_t input_dim = 2,
                            std::size_t output_dim = 2);

}  // namespace muprop::fixtures
