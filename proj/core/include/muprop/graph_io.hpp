#pragma once

#include <nlohmann/json.hpp>

#include "muprop/graph.hpp"

namespace muprop {

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j);

/// {"<node id>": tensor, ...}
nlohmann::json values_to_json(const ValueMap& values);
ValueMap values_from_json(const nlohmann::json& j);

/// Node list with kinds, ops, parents, shapes and op attributes:
/// {"nodes": [{"id":0,"kind":"parameter","shape":[2],"name":"w"}, ...], "cost": 7}
nlohmann::json graph_to_json(const Graph& graph);

/// Rebuilds a graph; ids in the document must be dense and in order.
Graph graph_from_json(const nlohmann::json& j);

}  // namespace muprop
