#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "muprop/estimators.hpp"

namespace muprop {

/// Largest joint support the enumeration routines will visit.
inline constexpr std::size_t kMaxConfigurations = std::size_t{1} << 16;

struct EnumerationReport {
  double exact_cost = 0.0;  // L = sum_config p(config) f(config)
  GradMap exact_grad;       // dL/dtheta for every parameter node
  std::size_t config_count = 0;
  double probability_mass = 0.0;  // sum_config p(config), 1 up to round-off
};

/// Product of the support sizes of all stochastic nodes; throws past kMaxConfigurations.
std::size_t configuration_count(const Graph& graph);

/// Visits every joint outcome of the stochastic nodes with its forced trace and probability.
void for_each_configuration(const Graph& graph, const ValueMap& inputs, const ValueMap& params,
                            const std::function<void(const Trace& forced, double probability)>& visit);

/// Exact expected cost and gradient. The gradient differentiates sum_config p(config) f(config)
/// with outcomes held fixed and the probabilities kept differentiable.
EnumerationReport exact_expected_cost_and_grad(const Problem& problem);

/// sum_config p(config) * g_hat(config) with g_hat evaluated on the forced trace.
/// Baselines are read but never updated; variance normalization is rejected.
GradMap estimator_expectation(const EstimatorConfig& config, const Problem& problem,
                              const BaselineState* baselines = nullptr);

struct Moments {
  GradMap mean;
  GradMap variance;             // per entry
  double total_variance = 0.0;  // sum of per-entry variances
  std::size_t samples = 0;
};

/// Exact mean and variance of an estimator under enumeration.
Moments exact_moments(const EstimatorConfig& config, const Problem& problem, const BaselineState* baselines = nullptr);

/// Sample mean and unbiased sample variance of n independent estimates. Trace i uses
/// seed derive_key(seed, i). When `baselines` is given and the config has flags, the state is
/// updated after every estimate (batch size 1).
Moments empirical_moments(const EstimatorConfig& config, const Problem& problem, std::size_t n, std::uint64_t seed,
                          BaselineState* baselines = nullptr, double idb_learning_rate = 0.0);

/// |a - b| / max(1e-8, |b|) in the Euclidean norm, with b the reference value.
double relative_error(const Tensor& estimate, const Tensor& reference);

/// Max over parameter tensors of relative_error.
double max_relative_error(const GradMap& estimate, const GradMap& reference);

/// Central differences of the mean-field cost against gradients(); returns the max over
/// parameter tensors of the relative error.
double finite_difference_check(const Graph& graph, NodeId cost, const ValueMap& inputs, const ValueMap& params,
                               double step = 1e-5);

/// Central-difference gradient of the mean-field cost w.r.t. every parameter.
GradMap finite_difference_gradient(const Graph& graph, NodeId cost, const ValueMap& inputs, const ValueMap& params,
                                   double step);

}  // namespace muprop
