#include "muprop/distributions.hpp"

#include <cmath>
#include <string>

namespace muprop {

std::string_view to_string(Dist d) { return d == Dist::Bernoulli ? "bernoulli" : "categorical"; }

Dist dist_from_string(std::string_view s) {
  if (s == "bernoulli") return Dist::Bernoulli;
  if (s == "categorical") return Dist::Categorical;
  throw Error("unknown distribution '" + std::string(s) + "'");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

UnitLayout unit_layout(Dist d, const Shape& logits_shape) {
  if (d == Dist::Bernoulli) return {numel(logits_shape), 2};
  if (logits_shape.empty()) throw Error("categorical logits need rank >= 1");
  const std::size_t k = logits_shape.back();
  if (k == 0) throw Error("categorical unit with zero categories");
  return {numel(logits_shape) / k, k};
}

namespace {

double row_logsumexp(std::span<const double> row) {
  double m = row[0];
  for (double v : row) m = std::max(m, v);
  double s = 0.0;
  for (double v : row) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

Tensor mean(const BernoulliLayer& layer) {
  Tensor out(layer.logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(layer.logits[i]);
  return out;
}

Tensor mean(const CategoricalLayer& layer) {
  const auto [u, k] = unit_layout(Dist::Categorical, layer.logits.shape());
  Tensor out(layer.logits.shape());
  for (std::size_t r = 0; r < u; ++r) {
    auto row = layer.logits.data().subspan(r * k, k);
    const double lse = row_logsumexp(row);
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = std::exp(row[c] - lse);
  }
  return out;
}

Tensor sample(const BernoulliLayer& layer, CounterRng& rng) {
  Tensor out(layer.logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.uniform() < sigmoid(layer.logits[i]) ? 1.0 : 0.0;
  return out;
}

Tensor sample(const CategoricalLayer& layer, CounterRng& rng) {
  const auto [u, k] = unit_layout(Dist::Categorical, layer.logits.shape());
  const Tensor mu = mean(layer);
  Tensor out(layer.logits.shape());
  for (std::size_t r = 0; r < u; ++r) {
    const double draw = rng.uniform();
    double cdf = 0.0;
    std::size_t chosen = k - 1;
    for (std::size_t c = 0; c < k; ++c) {
      cdf += mu[r * k + c];
      if (draw < cdf) {
        chosen = c;
        break;
      }
    }
    out[r * k + chosen] = 1.0;
  }
  return out;
}

void check_support(Dist d, const Tensor& logits, const Tensor& value) {
  if (value.size() != logits.size()) {
    throw Error("value shape " + shape_string(value.shape()) + " does not match logits shape " +
                shape_string(logits.shape()));
  }
  if (d == Dist::Bernoulli) {
    for (double v : value.data())
      if (v != 0.0 && v != 1.0) throw Error("value out of support: Bernoulli value must be 0 or 1");
    return;
  }
  const auto [u, k] = unit_layout(d, logits.shape());
  for (std::size_t r = 0; r < u; ++r) {
    int ones = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double v = value[r * k + c];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1) throw Error("value out of support: categorical row " + std::to_string(r) + " is not one-hot");
  }
}

double log_prob(const BernoulliLayer& layer, const Tensor& value) {
  check_support(Dist::Bernoulli, layer.logits, value);
  double acc = 0.0;
  for (std::size_t i = 0; i < value.size(); ++i) {
    const double l = layer.logits[i];
    acc += value[i] * l - softplus(l);
  }
  return acc;
}

double log_prob(const CategoricalLayer& layer, const Tensor& value) {
  check_support(Dist::Categorical, layer.logits, value);
  const auto [u, k] = unit_layout(Dist::Categorical, layer.logits.shape());
  double acc = 0.0;
  for (std::size_t r = 0; r < u; ++r) {
    auto row = layer.logits.data().subspan(r * k, k);
    const double lse = row_logsumexp(row);
    for (std::size_t c = 0; c < k; ++c) acc += value[r * k + c] * (row[c] - lse);
  }
  return acc;
}

Tensor score(const BernoulliLayer& layer, const Tensor& value) {
  check_support(Dist::Bernoulli, layer.logits, value);
  return value.reshaped(layer.logits.shape()) - mean(layer);
}

Tensor score(const CategoricalLayer& layer, const Tensor& value) {
  check_support(Dist::Categorical, layer.logits, value);
  return value.reshaped(layer.logits.shape()) - mean(layer);
}

Tensor dist_mean(Dist d, const Tensor& logits) {
  return d == Dist::Bernoulli ? mean(BernoulliLayer{logits}) : mean(CategoricalLayer{logits});
}

Tensor dist_sample(Dist d, const Tensor& logits, CounterRng& rng) {
  return d == Dist::Bernoulli ? sample(BernoulliLayer{logits}, rng) : sample(CategoricalLayer{logits}, rng);
}

double dist_log_prob(Dist d, const Tensor& logits, const Tensor& value) {
  return d == Dist::Bernoulli ? log_prob(BernoulliLayer{logits}, value) : log_prob(CategoricalLayer{logits}, value);
}

Tensor dist_score(Dist d, const Tensor& logits, const Tensor& value) {
  return d == Dist::Bernoulli ? score(BernoulliLayer{logits}, value) : score(CategoricalLayer{logits}, value);
}

Tensor dist_mean_vjp(Dist d, const Tensor& logits, const Tensor& adjoint) {
  const Tensor mu = dist_mean(d, logits);
  Tensor out(logits.shape());
  if (d == Dist::Bernoulli) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = adjoint[i] * mu[i] * (1.0 - mu[i]);
    return out;
  }
  const auto [u, k] = unit_layout(d, logits.shape());
  for (std::size_t r = 0; r < u; ++r) {
    double inner = 0.0;
    for (std::size_t c = 0; c < k; ++c) inner += adjoint[r * k + c] * mu[r * k + c];
    for (std::size_t c = 0; c < k; ++c) out[r * k + c] = mu[r * k + c] * (adjoint[r * k + c] - inner);
  }
  return out;
}

}  // namespace muprop
