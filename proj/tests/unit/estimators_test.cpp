#include <gtest/gtest.h>

#include <cmath>

#include "muprop/fixtures.hpp"
#include "muprop/oracle.hpp"

using namespace muprop;
using fixtures::TestProblem;
using fixtures::UnitCost;

namespace {

NodeId id_of(const TestProblem& p, const char* name) { return *p.graph.find(name); }

/// Estimate on the trace with x forced to `value` (single-unit problems).
double single_unit_estimate(const TestProblem& p, EstimatorKind kind, double value,
                            const BaselineState* baselines = nullptr, BaselineFlags flags = {}) {
  const Problem pr = p.problem();
  const Trace t = forward_forced(p.graph, p.inputs, p.params, {{id_of(p, "x"), Tensor::vector({value})}});
  EstimatorConfig c;
  c.kind = kind;
  c.flags = flags;
  return estimate(c, pr, t, baselines).grads.at(id_of(p, "theta"))[0];
}

double expectation(const TestProblem& p, EstimatorKind kind) {
  EstimatorConfig c;
  c.kind = kind;
  return estimator_expectation(c, p.problem()).at(id_of(p, "theta"))[0];
}

Trace forced(const TestProblem& p, const ValueMap& outcomes) {
  return forward_forced(p.graph, p.inputs, p.params, outcomes);
}

}  // namespace

TEST(EstimatorNames, ParseAndPrint) {
  EXPECT_EQ(estimator_from_string("muprop_rollout"), EstimatorKind::MuPropRollout);
  EXPECT_EQ(estimator_from_string("1/2"), EstimatorKind::Half);
  EXPECT_THROW(estimator_from_string("nvil"), Error);
  const BaselineFlags f = flags_from_string("idb,c");
  EXPECT_TRUE(f.center && f.idb && !f.variance_norm);
  EXPECT_EQ(to_string(f), "c,idb");
  EXPECT_THROW(flags_from_string("c,xyz"), Error);
  EXPECT_EQ(label(EstimatorConfig{EstimatorKind::MuProp, flags_from_string("c,vn")}), "muprop-c-vn");
  EXPECT_EQ(label(EstimatorConfig{EstimatorKind::ST}), "st");
  EXPECT_EQ(xbar_from_string("1/k"), XbarChoice::InverseK);
}

TEST(LikelihoodRatio, SingleUnitPerSampleValues) {
  const TestProblem p = fixtures::single_unit(UnitCost::Linear);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::LR, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::LR, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(expectation(p, EstimatorKind::LR), 0.25);
}

TEST(LikelihoodRatio, CenteredConstantCostGivesZero) {
  const TestProblem p = fixtures::single_unit(UnitCost::Constant, 0.0, 2.5);
  BaselineState s = BaselineState::create(p.graph);
  s.moving_mean[0] = 2.5;
  for (double x : {0.0, 1.0}) {
    EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::LR, x, &s, BaselineFlags{true, false, false}), 0.0);
  }
}

TEST(LikelihoodRatio, RawVarianceOnLinearUnit) {
  const TestProblem p = fixtures::single_unit(UnitCost::Linear);
  EstimatorConfig c{EstimatorKind::LR};
  EXPECT_NEAR(exact_moments(c, p.problem()).total_variance, 0.0625, 1e-15);
}

TEST(LikelihoodRatio, IncludesPathwiseGradients) {
  // f = (x + w)^2 with w a parameter inside the cost: df/dw = 2 (x + w) on every sample.
  Graph g;
  const NodeId theta = g.parameter("theta", Shape{1});
  const NodeId w = g.parameter("w", Shape{1});
  const NodeId x = g.bernoulli(theta, "x");
  const NodeId c = g.cost(g.sum(g.square(g.add(x, w))));
  const ValueMap params{{theta, Tensor::vector({0.3})}, {w, Tensor::vector({0.7})}};
  const ValueMap inputs;
  const Problem pr{g, c, inputs, params};
  const Trace t = forward_forced(g, inputs, params, {{x, Tensor::vector({1.0})}});
  EXPECT_NEAR(lr_estimate(pr, t).grads.at(w)[0], 2.0 * 1.7, 1e-14);
}

TEST(MuProp, SingleUnitQuadraticPerSample) {
  const TestProblem p = fixtures::single_unit(UnitCost::Square);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::MuProp, 1.0), 0.375);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::MuProp, 0.0), 0.125);
  EXPECT_DOUBLE_EQ(expectation(p, EstimatorKind::MuProp), 0.25);
  const Moments m = exact_moments(EstimatorConfig{EstimatorKind::MuProp}, p.problem());
  EXPECT_NEAR(m.total_variance, 0.015625, 1e-15);
}

TEST(MuProp, ResidualDiagnostics) {
  const TestProblem p = fixtures::single_unit(UnitCost::Square);
  const GradientEstimate e = muprop_estimate(p.problem(), forced(p, {{id_of(p, "x"), Tensor::vector({1.0})}}));
  ASSERT_EQ(e.nodes.size(), 1u);
  // R = f(x) - f(xbar) - f'(xbar)(x - xbar) = 1 - 0.25 - 0.5.
  EXPECT_DOUBLE_EQ(e.nodes[0].raw_signal, 0.25);
  EXPECT_TRUE(e.has_learning_signals);
  EXPECT_EQ(e.mean_field_passes, 1);
  EXPECT_EQ(e.stochastic_passes, 1);
}

TEST(MuProp, LinearCostIsDeterministicAndExact) {
  for (double logit : {-1.3, 0.0, 0.8}) {
    const TestProblem p = fixtures::single_unit(UnitCost::Linear, logit);
    const double a = single_unit_estimate(p, EstimatorKind::MuProp, 0.0);
    const double b = single_unit_estimate(p, EstimatorKind::MuProp, 1.0);
    EXPECT_DOUBLE_EQ(a, b);
    const double s = 1.0 / (1.0 + std::exp(-logit));
    EXPECT_NEAR(a, s * (1 - s), 1e-15);
    const Moments m = empirical_moments(EstimatorConfig{EstimatorKind::MuProp}, p.problem(), 200, 3);
    EXPECT_EQ(m.total_variance, 0.0);
  }
}

TEST(MuProp, TwoLayerChainIsUnbiased) {
  const TestProblem p = fixtures::bernoulli_chain(4, {2, 2});
  const EnumerationReport exact = exact_expected_cost_and_grad(p.problem());
  EXPECT_EQ(exact.config_count, 16u);
  EXPECT_LT(max_relative_error(estimator_expectation(EstimatorConfig{EstimatorKind::MuProp}, p.problem()),
                               exact.exact_grad),
            1e-8);
}

TEST(MuProp, SeedOverloadMatchesTraceOverload) {
  const TestProblem p = fixtures::bernoulli_chain(5, {3, 2});
  const Problem pr = p.problem();
  EXPECT_EQ(muprop_estimate(pr, 77).grads, muprop_estimate(pr, sample_trace(pr, 77)).grads);
}

TEST(MuPropRollout, SingleLayerMatchesMuProp) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TestProblem p = fixtures::bernoulli_chain(seed, {3});
    const Problem pr = p.problem();
    const Trace t = sample_trace(pr, seed);
    const GradMap a = muprop_estimate(pr, t).grads;
    const GradMap b = muprop_rollout_estimate(pr, t).grads;
    EXPECT_LT(max_relative_error(b, a), 1e-14);
  }
}

TEST(MuPropRollout, TwoLayerChainIsUnbiased) {
  const TestProblem p = fixtures::bernoulli_chain(9, {2, 2});
  const EnumerationReport exact = exact_expected_cost_and_grad(p.problem());
  EXPECT_LT(max_relative_error(estimator_expectation(EstimatorConfig{EstimatorKind::MuPropRollout}, p.problem()),
                               exact.exact_grad),
            1e-8);
}

TEST(MuPropRollout, ThreeLayerPassCount) {
  const TestProblem p = fixtures::bernoulli_chain(2, {2, 2, 2});
  const GradientEstimate e = muprop_rollout_estimate(p.problem(), sample_trace(p.problem(), 1));
  EXPECT_EQ(e.mean_field_passes, 3);
  EXPECT_EQ(e.stochastic_passes, 1);
}

TEST(MuPropRollout, DiffersFromSingleTrunkOnDeepChains) {
  const TestProblem p = fixtures::bernoulli_chain(3, {2, 2});
  const Problem pr = p.problem();
  bool differs = false;
  for (std::uint64_t s = 0; s < 10 && !differs; ++s) {
    const Trace t = sample_trace(pr, s);
    differs = max_relative_error(muprop_rollout_estimate(pr, t).grads, muprop_estimate(pr, t).grads) > 1e-6;
  }
  EXPECT_TRUE(differs);
}

TEST(StraightThrough, LinearCostHasZeroVariance) {
  const TestProblem p = fixtures::single_unit(UnitCost::Linear);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::ST, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::ST, 0.0), 0.25);
}

TEST(StraightThrough, CubeIsBiased) {
  const TestProblem p = fixtures::single_unit(UnitCost::Cube);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::ST, 1.0), 0.75);
  EXPECT_DOUBLE_EQ(single_unit_estimate(p, EstimatorKind::ST, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(expectation(p, EstimatorKind::ST), 0.375);
}

TEST(StraightThrough, SquareHappensToBeExact) {
  EXPECT_DOUBLE_EQ(expectation(fixtures::single_unit(UnitCost::Square), EstimatorKind::ST), 0.25);
}

TEST(HalfEstimator, BinaryPerSampleValues) {
  const TestProblem sq = fixtures::single_unit(UnitCost::Square);
  EXPECT_DOUBLE_EQ(single_unit_estimate(sq, EstimatorKind::Half, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(single_unit_estimate(sq, EstimatorKind::Half, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(expectation(sq, EstimatorKind::Half), 0.25);
  const TestProblem cube = fixtures::single_unit(UnitCost::Cube);
  EXPECT_DOUBLE_EQ(single_unit_estimate(cube, EstimatorKind::Half, 1.0), 0.75);
  EXPECT_DOUBLE_EQ(single_unit_estimate(cube, EstimatorKind::Half, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(expectation(cube, EstimatorKind::Half), 0.375);
}

TEST(HalfEstimator, LinearIsExact) {
  for (double logit : {-2.0, 0.5}) {
    const TestProblem p = fixtures::single_unit(UnitCost::Linear, logit);
    const double exact = exact_expected_cost_and_grad(p.problem()).exact_grad.begin()->second[0];
    EXPECT_NEAR(expectation(p, EstimatorKind::Half), exact, 1e-14);
  }
}

TEST(HalfEstimator, QuadraticExactnessRandomized) {
  CounterRng rng(31);
  for (int i = 0; i < 50; ++i) {
    const TestProblem p = fixtures::single_unit_quadratic(rng.normal() * 3, rng.normal() * 3, rng.normal() * 3,
                                                          rng.normal() * 2);
    const double exact = exact_expected_cost_and_grad(p.problem()).exact_grad.at(id_of(p, "theta"))[0];
    EXPECT_LE(std::abs(expectation(p, EstimatorKind::Half) - exact), 1e-10 * std::max(1e-8, std::abs(exact)) + 1e-16);
  }
}

TEST(HalfEstimator, ClampsSaturatedProbabilities) {
  const TestProblem p = fixtures::single_unit(UnitCost::Square, -40.0);
  const GradientEstimate e = half_estimate_binary(p.problem(), forced(p, {{id_of(p, "x"), Tensor::vector({1.0})}}));
  ASSERT_EQ(e.nodes.size(), 1u);
  EXPECT_TRUE(e.nodes[0].clamped);
  EXPECT_TRUE(e.grads.begin()->second.all_finite());
}

TEST(HalfEstimator, MultinomialHandExample) {
  const TestProblem p = fixtures::single_categorical({0.0, 0.0});
  const Trace t = forced(p, {{id_of(p, "x"), Tensor(Shape{1, 2}, std::vector<double>{1.0, 0.0})}});
  const Tensor g = half_estimate_multinomial(p.problem(), t, XbarChoice::InverseK).grads.at(id_of(p, "theta"));
  EXPECT_DOUBLE_EQ(g[0], 0.25);
  EXPECT_DOUBLE_EQ(g[1], -0.25);
}

TEST(HalfEstimator, MultinomialConstantCostGivesZero) {
  Graph g;
  const NodeId theta = g.parameter("theta", Shape{1, 3});
  const NodeId x = g.categorical(theta, "x");
  const NodeId c = g.input("c", Shape{});
  const NodeId cost = g.cost(g.add(g.scale(g.sum(x), 0.0), c));
  const ValueMap inputs{{c, Tensor::scalar(4.0)}};
  const ValueMap params{{theta, Tensor(Shape{1, 3}, std::vector<double>{0.2, -0.1, 0.5})}};
  const Problem pr{g, cost, inputs, params};
  for (XbarChoice xb : {XbarChoice::Half, XbarChoice::InverseK, XbarChoice::Mean}) {
    for (std::uint64_t s = 0; s < 5; ++s) {
      EXPECT_EQ(max_abs(half_estimate_multinomial(pr, sample_trace(pr, s), xb).grads.at(theta)), 0.0);
    }
  }
}

TEST(HalfEstimator, MultinomialLinearCostHasZeroBias) {
  // For f = x_1 on a uniform k = 3 unit the per-sample value is (x_1 - xbar) * dlog p(x),
  // whose expectation is the exact gradient for any constant xbar.
  const TestProblem p = fixtures::single_categorical({0.0, 0.0, 0.0});
  const Tensor ex = exact_expected_cost_and_grad(p.problem()).exact_grad.at(id_of(p, "theta"));
  EXPECT_NEAR(ex[0], 2.0 / 9.0, 1e-15);
  EXPECT_NEAR(ex[1], -1.0 / 9.0, 1e-15);
  for (XbarChoice xb : {XbarChoice::Half, XbarChoice::InverseK, XbarChoice::Mean}) {
    const Tensor e = estimator_expectation(EstimatorConfig{EstimatorKind::Half, {}, xb}, p.problem()).at(id_of(p, "theta"));
    EXPECT_LT(relative_error(e, ex), 1e-14) << to_string(xb);
  }
}

TEST(HalfEstimator, MultinomialQuadraticBiasIsMeasurable) {
  // f = x_1^2: the estimator's mean is 2 (1 - xbar) times the exact gradient.
  Graph g;
  const NodeId theta = g.parameter("theta", Shape{1, 3});
  const NodeId x = g.categorical(theta, "x");
  const NodeId cost = g.cost(g.sum(g.square(g.slice(g.reshape(x, Shape{3}), 0, 1))));
  const ValueMap inputs;
  const ValueMap params{{theta, Tensor(Shape{1, 3})}};
  const Problem pr{g, cost, inputs, params};
  const Tensor ex = exact_expected_cost_and_grad(pr).exact_grad.at(theta);
  const Tensor inv_k = estimator_expectation(EstimatorConfig{EstimatorKind::Half, {}, XbarChoice::InverseK}, pr).at(theta);
  const Tensor half = estimator_expectation(EstimatorConfig{EstimatorKind::Half, {}, XbarChoice::Half}, pr).at(theta);
  EXPECT_LT(relative_error(inv_k, ex * (4.0 / 3.0)), 1e-14);
  EXPECT_GT(relative_error(inv_k, ex), 0.3);
  EXPECT_LT(relative_error(half, ex), 1e-14);
}

TEST(HalfEstimator, PreconditionsOnUnitKinds) {
  const TestProblem cat = fixtures::single_categorical({0.0, 0.0});
  const TestProblem bin = fixtures::single_unit(UnitCost::Linear);
  EXPECT_THROW(half_estimate_binary(cat.problem(), sample_trace(cat.problem(), 1)), Error);
  EXPECT_THROW(half_estimate_multinomial(bin.problem(), sample_trace(bin.problem(), 1)), Error);
  EXPECT_NO_THROW(half_estimate(cat.problem(), sample_trace(cat.problem(), 1)));
}

TEST(Estimators, GradientsKeyedByEveryParameter) {
  const TestProblem p = fixtures::random_problem(12);
  const Problem pr = p.problem();
  const Trace t = sample_trace(pr, 4);
  for (EstimatorKind k : {EstimatorKind::LR, EstimatorKind::MuProp, EstimatorKind::MuPropRollout, EstimatorKind::ST,
                          EstimatorKind::Half}) {
    const GradientEstimate e = estimate(EstimatorConfig{k}, pr, t);
    ASSERT_EQ(e.grads.size(), p.graph.parameters().size());
    for (NodeId id : p.graph.parameters()) {
      EXPECT_EQ(e.grads.at(id).shape(), p.graph.node(id).shape);
      EXPECT_TRUE(e.grads.at(id).all_finite());
    }
  }
}

TEST(Estimators, MuPropNeedsStochasticNodes) {
  Graph g;
  const NodeId w = g.parameter("w", Shape{1});
  const NodeId c = g.cost(g.sum(g.square(w)));
  const ValueMap params{{w, Tensor::vector({1.0})}};
  const ValueMap inputs;
  const Problem pr{g, c, inputs, params};
  EXPECT_THROW(muprop_estimate(pr, 1), Error);
}

TEST(Estimators, FlagsWithoutStateAreRejected) {
  const TestProblem p = fixtures::single_unit(UnitCost::Linear);
  const Problem pr = p.problem();
  EXPECT_THROW(estimate(EstimatorConfig{EstimatorKind::LR, BaselineFlags{true, false, false}}, pr, sample_trace(pr, 1)),
               Error);
}
