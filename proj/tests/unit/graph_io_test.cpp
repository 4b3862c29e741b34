#include <gtest/gtest.h>

#include "muprop/fixtures.hpp"
#include "muprop/graph_io.hpp"
#include "muprop/models.hpp"

using namespace muprop;

TEST(GraphIo, RoundTripPreservesEvaluation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const fixtures::TestProblem p = fixtures::random_problem(seed);
    const Graph copy = graph_from_json(graph_to_json(p.graph));
    ASSERT_EQ(copy.size(), p.graph.size());
    EXPECT_EQ(graph_to_json(copy), graph_to_json(p.graph));
    const Trace a = forward(p.graph, p.inputs, p.params, Mode::Stochastic, seed);
    const Trace b = forward(copy, p.inputs, p.params, Mode::Stochastic, seed);
    EXPECT_EQ(a.values, b.values);
  }
}

TEST(GraphIo, ModelGraphRoundTrips) {
  const Model m = build_sbn_variational(LayerSpec::parse("3x2-4-6"));
  const nlohmann::json j = graph_to_json(m.graph);
  EXPECT_EQ(graph_to_json(graph_from_json(j)), j);
  EXPECT_EQ(j.at("cost").get<NodeId>(), m.cost);
}

TEST(GraphIo, ValuesRoundTripExactly) {
  ValueMap v{{0, Tensor::vector({0.1, 1.0 / 3.0})}, {4, Tensor(Shape{2, 2}, std::vector<double>{1e-300, -2, 3, 4})}};
  EXPECT_EQ(values_from_json(values_to_json(v)), v);
}

TEST(GraphIo, RejectsMalformedDocuments) {
  nlohmann::json j = graph_to_json(fixtures::single_unit(fixtures::UnitCost::Linear).graph);
  j["nodes"][1]["parents"] = {7};
  EXPECT_THROW(graph_from_json(j), Error);
  nlohmann::json k = graph_to_json(fixtures::single_unit(fixtures::UnitCost::Linear).graph);
  k["nodes"][0]["id"] = 5;
  EXPECT_THROW(graph_from_json(k), Error);
}
