#include "muprop/graph_io.hpp"

#include <string>

namespace muprop {

using nlohmann::json;

json tensor_to_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const json& j) {
  return Tensor(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
}

json values_to_json(const ValueMap& values) {
  json j = json::object();
  for (const auto& [id, t] : values) j[std::to_string(id)] = tensor_to_json(t);
  return j;
}

ValueMap values_from_json(const json& j) {
  ValueMap out;
  for (const auto& [key, val] : j.items()) out.emplace(static_cast<NodeId>(std::stoi(key)), tensor_from_json(val));
  return out;
}

json graph_to_json(const Graph& graph) {
  json nodes = json::array();
  for (const Node& n : graph.nodes()) {
    json e{{"id", n.id}, {"kind", to_string(n.kind)}, {"parents", n.parents}, {"shape", n.shape}};
    if (!n.name.empty()) e["name"] = n.name;
    if (n.kind == NodeKind::Deterministic) e["op"] = to_string(n.op);
    if (n.kind == NodeKind::Stochastic || n.op == Op::LogProb) e["dist"] = to_string(n.dist);
    if (n.op == Op::Scale) e["scale"] = n.scale;
    if (n.op == Op::Slice) {
      e["begin"] = n.begin;
      e["end"] = n.end;
    }
    nodes.push_back(std::move(e));
  }
  json j{{"nodes", std::move(nodes)}};
  if (auto c = graph.cost_node()) j["cost"] = *c;
  return j;
}

Graph graph_from_json(const json& j) {
  Graph g;
  for (const json& e : j.at("nodes")) {
    NodeSpec spec;
    spec.kind = node_kind_from_string(e.at("kind").get<std::string>());
    if (e.contains("op")) spec.op = op_from_string(e.at("op").get<std::string>());
    if (e.contains("dist")) spec.dist = dist_from_string(e.at("dist").get<std::string>());
    spec.parents = e.value("parents", std::vector<NodeId>{});
    spec.name = e.value("name", std::string{});
    spec.scale = e.value("scale", 1.0);
    spec.begin = e.value("begin", std::size_t{0});
    spec.end = e.value("end", std::size_t{0});
    const bool shape_given = spec.kind == NodeKind::Input || spec.kind == NodeKind::Parameter || spec.op == Op::Reshape;
    if (shape_given) spec.shape = e.at("shape").get<Shape>();
    const NodeId id = g.add_node(spec);
    if (e.contains("id") && e.at("id").get<NodeId>() != id) {
      throw Error("graph json: node ids must be dense and ordered (expected " + std::to_string(id) + ")");
    }
    if (e.contains("shape") && e.at("shape").get<Shape>() != g.node(id).shape) {
      throw Error("graph json: declared shape of node " + std::to_string(id) + " disagrees with inferred shape");
    }
  }
  return g;
}

}  // namespace muprop
