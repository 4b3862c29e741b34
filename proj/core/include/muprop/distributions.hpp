#pragma once

#include <string_view>

#include "muprop/rng.hpp"
#include "muprop/tensor.hpp"

namespace muprop {

/// Unit family of a stochastic node. Both are parameterized by logits.
enum class Dist { Bernoulli, Categorical };

std::string_view to_string(Dist d);
Dist dist_from_string(std::string_view s);

double sigmoid(double x);
double softplus(double x);

/// A layer of independent Bernoulli units, mean = sigmoid(logits).
struct BernoulliLayer {
  Tensor logits;
};

/// u independent categorical units of k classes; logits are [u, k] (or [k] for u = 1).
/// Values are one-hot rows.
struct CategoricalLayer {
  Tensor logits;
};

Tensor mean(const BernoulliLayer& layer);
Tensor mean(const CategoricalLayer& layer);

Tensor sample(const BernoulliLayer& layer, CounterRng& rng);
Tensor sample(const CategoricalLayer& layer, CounterRng& rng);

double log_prob(const BernoulliLayer& layer, const Tensor& value);
double log_prob(const CategoricalLayer& layer, const Tensor& value);

/// d log_prob / d logits, which is value - mean for both families.
Tensor score(const BernoulliLayer& layer, const Tensor& value);
Tensor score(const CategoricalLayer& layer, const Tensor& value);

// Family-dispatched forms used by the graph engine and the estimators.
Tensor dist_mean(Dist d, const Tensor& logits);
Tensor dist_sample(Dist d, const Tensor& logits, CounterRng& rng);
double dist_log_prob(Dist d, const Tensor& logits, const Tensor& value);
Tensor dist_score(Dist d, const Tensor& logits, const Tensor& value);

/// Vector-Jacobian product of the mean function: J_mu(logits)^T * adjoint.
Tensor dist_mean_vjp(Dist d, const Tensor& logits, const Tensor& adjoint);

/// Throws Error unless value is binary (Bernoulli) or one-hot per row (categorical).
void check_support(Dist d, const Tensor& logits, const Tensor& value);

/// Number of units and categories per unit for a logits tensor.
struct UnitLayout {
  std::size_t units;
  std::size_t categories;  // 2 for Bernoulli
};
UnitLayout unit_layout(Dist d, const Shape& logits_shape);

}  // namespace muprop
