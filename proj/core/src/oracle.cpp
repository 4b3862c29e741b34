#include "muprop/oracle.hpp"

#include <cmath>
#include <limits>

namespace muprop {

std::size_t configuration_count(const Graph& graph) {
  std::size_t total = 1;
  for (NodeId id : graph.stochastic_nodes()) {
    const Node& n = graph.node(id);
    const auto [units, k] = unit_layout(n.dist, n.shape);
    for (std::size_t u = 0; u < units; ++u) {
      if (total > kMaxConfigurations / k) {
        throw Error("enumeration guard exceeded: more than " + std::to_string(kMaxConfigurations) + " configurations");
      }
      total *= k;
    }
  }
  return total;
}

void for_each_configuration(const Graph& graph, const ValueMap& inputs, const ValueMap& params,
                            const std::function<void(const Trace&, double)>& visit) {
  const std::size_t total = configuration_count(graph);
  for (std::size_t index = 0; index < total; ++index) {
    // Mixed-radix decode: each unit consumes one digit of base k.
    std::size_t rest = index;
    ValueMap outcomes;
    for (NodeId id : graph.stochastic_nodes()) {
      const Node& n = graph.node(id);
      const auto [units, k] = unit_layout(n.dist, n.shape);
      Tensor value(n.shape);
      for (std::size_t u = 0; u < units; ++u) {
        const std::size_t digit = rest % k;
        rest /= k;
        if (n.dist == Dist::Bernoulli) {
          value[u] = static_cast<double>(digit);
        } else {
          value[u * k + digit] = 1.0;
        }
      }
      outcomes.emplace(id, std::move(value));
    }
    const Trace trace = forward_forced(graph, inputs, params, outcomes);
    double logp = 0.0;
    for (const auto& [id, lp] : trace.logprobs) logp += lp;
    visit(trace, std::exp(logp));
  }
}

EnumerationReport exact_expected_cost_and_grad(const Problem& problem) {
  const Graph& g = problem.graph;
  EnumerationReport report;
  for (NodeId id : g.parameters()) report.exact_grad.emplace(id, Tensor(g.node(id).shape));

  for_each_configuration(g, problem.inputs, problem.params, [&](const Trace& trace, double p) {
    const double f = trace.value(problem.cost).item();
    report.exact_cost += p * f;
    report.probability_mass += p;
    ++report.config_count;
    // d(p f) = p df + f p d(log p), with d log p_i / d logits_i = x_i - mu_i.
    ValueMap seeds;
    seeds.emplace(problem.cost, Tensor(g.node(problem.cost).shape, p));
    for (NodeId id : g.stochastic_nodes()) {
      const Node& n = g.node(id);
      Tensor s = dist_score(n.dist, trace.value(n.parents[0]), trace.value(id)) * (p * f);
      auto [it, inserted] = seeds.try_emplace(n.parents[0], s);
      if (!inserted) it->second += s;
    }
    const auto adj = backward(g, trace, seeds);
    for (auto& [id, grad] : report.exact_grad) grad += adj[static_cast<std::size_t>(id)];
  });
  return report;
}

namespace {

void check_expectation_config(const EstimatorConfig& config, const BaselineState* baselines) {
  if (config.flags.variance_norm) {
    throw Error("estimator_expectation: variance normalization is adaptive and not covered by enumeration");
  }
  if (config.flags.any() && baselines == nullptr) throw Error("baseline flags set but no baseline state given");
}

GradMap zero_grads(const Graph& g) {
  GradMap out;
  for (NodeId id : g.parameters()) out.emplace(id, Tensor(g.node(id).shape));
  return out;
}

}  // namespace

GradMap estimator_expectation(const EstimatorConfig& config, const Problem& problem, const BaselineState* baselines) {
  check_expectation_config(config, baselines);
  GradMap mean = zero_grads(problem.graph);
  for_each_configuration(problem.graph, problem.inputs, problem.params, [&](const Trace& trace, double p) {
    const GradientEstimate e = estimate(config, problem, trace, baselines);
    for (auto& [id, m] : mean) m += e.grads.at(id) * p;
  });
  return mean;
}

Moments exact_moments(const EstimatorConfig& config, const Problem& problem, const BaselineState* baselines) {
  check_expectation_config(config, baselines);
  Moments m;
  m.mean = zero_grads(problem.graph);
  m.variance = zero_grads(problem.graph);
  GradMap second = zero_grads(problem.graph);
  for_each_configuration(problem.graph, problem.inputs, problem.params, [&](const Trace& trace, double p) {
    const GradientEstimate e = estimate(config, problem, trace, baselines);
    for (auto& [id, mu] : m.mean) {
      const Tensor& g = e.grads.at(id);
      mu += g * p;
      Tensor& s = second.at(id);
      for (std::size_t i = 0; i < g.size(); ++i) s[i] += p * g[i] * g[i];
    }
    ++m.samples;
  });
  for (auto& [id, var] : m.variance) {
    const Tensor& mu = m.mean.at(id);
    const Tensor& s = second.at(id);
    for (std::size_t i = 0; i < var.size(); ++i) {
      var[i] = std::max(0.0, s[i] - mu[i] * mu[i]);
      m.total_variance += var[i];
    }
  }
  return m;
}

Moments empirical_moments(const EstimatorConfig& config, const Problem& problem, std::size_t n, std::uint64_t seed,
                          BaselineState* baselines, double idb_learning_rate) {
  if (n < 2) throw Error("empirical_moments needs at least 2 samples");
  if (config.flags.any() && baselines == nullptr) throw Error("baseline flags set but no baseline state given");
  Moments m;
  m.mean = zero_grads(problem.graph);
  GradMap m2 = zero_grads(problem.graph);  // Welford sums of squared deviations
  for (std::size_t i = 0; i < n; ++i) {
    const Trace trace = sample_trace(problem, derive_key(seed, i));
    GradientEstimate e = estimate(config, problem, trace, baselines);
    const double count = static_cast<double>(i + 1);
    for (auto& [id, mu] : m.mean) {
      const Tensor& g = e.grads.at(id);
      Tensor& acc = m2.at(id);
      for (std::size_t j = 0; j < g.size(); ++j) {
        const double delta = g[j] - mu[j];
        mu[j] += delta / count;
        acc[j] += delta * (g[j] - mu[j]);
      }
    }
    if (baselines && config.flags.any()) {
      update_baselines(*baselines, std::span<const GradientEstimate>(&e, 1), config.flags, idb_learning_rate);
    }
  }
  m.samples = n;
  m.variance = std::move(m2);
  for (auto& [id, var] : m.variance) {
    var *= 1.0 / static_cast<double>(n - 1);
    for (double v : var.data()) m.total_variance += v;
  }
  return m;
}

double relative_error(const Tensor& estimate, const Tensor& reference) {
  const double diff = std::sqrt(squared_norm(estimate - reference));
  return diff / std::max(1e-8, std::sqrt(squared_norm(reference)));
}

double max_relative_error(const GradMap& estimate, const GradMap& reference) {
  double worst = 0.0;
  for (const auto& [id, ref] : reference) {
    auto it = estimate.find(id);
    if (it == estimate.end()) return std::numeric_limits<double>::infinity();
    worst = std::max(worst, relative_error(it->second, ref));
  }
  return worst;
}

GradMap finite_difference_gradient(const Graph& graph, NodeId cost, const ValueMap& inputs, const ValueMap& params,
                                   double step) {
  if (!(step > 0.0)) throw Error("finite difference step must be positive");
  ValueMap work = params;
  auto eval = [&] { return forward(graph, inputs, work, Mode::MeanField).value(cost).item(); };
  GradMap out;
  for (NodeId id : graph.parameters()) {
    Tensor& theta = work.at(id);
    Tensor grad(theta.shape());
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + step;
      const double up = eval();
      theta[i] = saved - step;
      const double down = eval();
      theta[i] = saved;
      grad[i] = (up - down) / (2.0 * step);
    }
    out.emplace(id, std::move(grad));
  }
  return out;
}

double finite_difference_check(const Graph& graph, NodeId cost, const ValueMap& inputs, const ValueMap& params,
                               double step) {
  const GradMap numeric = finite_difference_gradient(graph, cost, inputs, params, step);
  const Trace trace = forward(graph, inputs, params, Mode::MeanField);
  const GradMap analytic = gradients(graph, cost, graph.parameters(), trace);
  return max_relative_error(analytic, numeric);
}

}  // namespace muprop
