#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "muprop/distributions.hpp"
#include "muprop/tensor.hpp"

namespace muprop {

using NodeId = std::int32_t;
using ValueMap = std::map<NodeId, Tensor>;
using GradMap = std::map<NodeId, Tensor>;

enum class NodeKind { Input, Parameter, Deterministic, Stochastic, StopGradient, Cost };

enum class Op {
  None,
  Affine,      // parents {x, W, b}: W x + b
  Sigmoid,
  Tanh,
  Softmax,     // along the last axis
  Add,
  Sub,
  Mul,
  Sum,
  Mean,
  Log,
  Exp,
  Concat,      // flattens and concatenates all parents
  Slice,       // flat range [begin, end)
  Square,
  Scale,       // constant multiple
  Reshape,
  LogProb,     // parents {logits, value}: log-likelihood of value under dist
  LogMeanExp,  // log((1/n) sum exp(x_i)), computed stably
};

std::string_view to_string(NodeKind k);
std::string_view to_string(Op op);
NodeKind node_kind_from_string(std::string_view s);
Op op_from_string(std::string_view s);

/// Everything needed to create a node. Shape is required for Input/Parameter
/// and is the target shape for Reshape; other shapes are inferred.
struct NodeSpec {
  NodeKind kind = NodeKind::Deterministic;
  Op op = Op::None;
  Dist dist = Dist::Bernoulli;
  std::vector<NodeId> parents;
  Shape shape;
  std::string name;
  double scale = 1.0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct Node {
  NodeId id = -1;
  NodeKind kind = NodeKind::Deterministic;
  Op op = Op::None;
  Dist dist = Dist::Bernoulli;
  std::vector<NodeId> parents;
  Shape shape;
  std::string name;
  double scale = 1.0;
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// A stochastic computation graph. Node ids are dense and topologically ordered:
/// every parent id is smaller than its child's id.
class Graph {
 public:
  NodeId add_node(const NodeSpec& spec);

  NodeId input(std::string name, Shape shape);
  NodeId parameter(std::string name, Shape shape);

  NodeId affine(NodeId x, NodeId weight, NodeId bias);
  NodeId sigmoid(NodeId x) { return unary(Op::Sigmoid, x); }
  NodeId tanh(NodeId x) { return unary(Op::Tanh, x); }
  NodeId softmax(NodeId x) { return unary(Op::Softmax, x); }
  NodeId log(NodeId x) { return unary(Op::Log, x); }
  NodeId exp(NodeId x) { return unary(Op::Exp, x); }
  NodeId square(NodeId x) { return unary(Op::Square, x); }
  NodeId sum(NodeId x) { return unary(Op::Sum, x); }
  NodeId mean(NodeId x) { return unary(Op::Mean, x); }
  NodeId log_mean_exp(NodeId x) { return unary(Op::LogMeanExp, x); }
  NodeId add(NodeId a, NodeId b) { return binary(Op::Add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::Sub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return binary(Op::Mul, a, b); }
  NodeId scale(NodeId x, double c);
  NodeId concat(std::vector<NodeId> parts);
  NodeId slice(NodeId x, std::size_t begin, std::size_t end);
  NodeId reshape(NodeId x, Shape shape);
  NodeId log_prob(Dist dist, NodeId logits, NodeId value);

  NodeId bernoulli(NodeId logits, std::string name = {});
  NodeId categorical(NodeId logits, std::string name = {});
  NodeId stop_gradient(NodeId x);
  NodeId cost(NodeId x, std::string name = "cost");

  const Node& node(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  std::span<const Node> nodes() const { return nodes_; }

  const std::vector<NodeId>& inputs() const { return inputs_; }
  const std::vector<NodeId>& parameters() const { return parameters_; }
  const std::vector<NodeId>& stochastic_nodes() const { return stochastic_; }

  /// The most recently added Cost node.
  std::optional<NodeId> cost_node() const { return cost_; }

  std::optional<NodeId> find(std::string_view name) const;

  /// True if `ancestor` lies on a directed path into `node`.
  bool is_ancestor(NodeId ancestor, NodeId node) const;

 private:
  NodeId unary(Op op, NodeId x);
  NodeId binary(Op op, NodeId a, NodeId b);

  std::vector<Node> nodes_;
  std::vector<NodeId> inputs_;
  std::vector<NodeId> parameters_;
  std::vector<NodeId> stochastic_;
  std::optional<NodeId> cost_;
};

enum class Mode { Stochastic, MeanField };

/// Values of every node from one forward evaluation.
struct Trace {
  Mode mode = Mode::MeanField;
  std::vector<Tensor> values;
  /// Log-probability of each stochastic node's outcome (Stochastic mode only).
  std::map<NodeId, double> logprobs;
  std::uint64_t rng_seed = 0;
  /// Stochastic nodes whose value was prescribed rather than sampled or averaged.
  std::vector<NodeId> pinned;

  const Tensor& value(NodeId id) const { return values.at(static_cast<std::size_t>(id)); }
  bool is_pinned(NodeId id) const;
};

/// Raised when a forward pass produces NaN or Inf.
class NumericError : public Error {
 public:
  NumericError(NodeId node, const std::string& what) : Error(what), node_(node) {}
  NodeId node() const { return node_; }

 private:
  NodeId node_;
};

/// Evaluates the graph in topological order. In Stochastic mode every stochastic node
/// draws from the stream derive_key(seed, node id); in MeanField mode it emits its mean.
Trace forward(const Graph& graph, const ValueMap& inputs, const ValueMap& params, Mode mode,
              std::optional<std::uint64_t> seed = std::nullopt);

/// Stochastic-mode evaluation with every stochastic outcome prescribed.
Trace forward_forced(const Graph& graph, const ValueMap& inputs, const ValueMap& params,
                     const ValueMap& outcomes);

/// Mean-field evaluation with some stochastic nodes pinned to given values.
Trace forward_branch(const Graph& graph, const ValueMap& inputs, const ValueMap& params,
                     const ValueMap& pinned);

/// Maps the adjoint of a sampled stochastic node's value onto its logits parent.
using SampleVjp =
    std::function<Tensor(const Node& node, const Tensor& logits, const Tensor& value, const Tensor& adjoint)>;

/// Reverse sweep seeded with arbitrary adjoints (seeds are added to the adjoints of
/// their nodes). Returns the adjoint of every node value.
///
/// Sampled nodes (Stochastic mode, or pinned) block the gradient unless `through_samples`
/// is given; mean-field stochastic nodes differentiate through their mean function.
/// StopGradient nodes always block.
std::vector<Tensor> backward(const Graph& graph, const Trace& trace, const ValueMap& seeds,
                             const SampleVjp& through_samples = {});

/// d cost / d node for each requested node. Unreachable nodes get zero tensors.
GradMap gradients(const Graph& graph, NodeId cost, std::span<const NodeId> wrt, const Trace& trace);

/// Mean of a stochastic node's distribution as evaluated on a trace.
Tensor stochastic_mean(const Graph& graph, const Trace& trace, NodeId node);

/// Logits feeding a stochastic node on a trace.
const Tensor& stochastic_logits(const Graph& graph, const Trace& trace, NodeId node);

}  // namespace muprop
