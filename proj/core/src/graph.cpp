#include "muprop/graph.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "muprop/rng.hpp"

namespace muprop {

namespace {

constexpr std::pair<NodeKind, std::string_view> kKindNames[] = {
    {NodeKind::Input, "input"},           {NodeKind::Parameter, "parameter"},
    {NodeKind::Deterministic, "deterministic"}, {NodeKind::Stochastic, "stochastic"},
    {NodeKind::StopGradient, "stop_gradient"},  {NodeKind::Cost, "cost"},
};

constexpr std::pair<Op, std::string_view> kOpNames[] = {
    {Op::None, "none"},       {Op::Affine, "affine"},   {Op::Sigmoid, "sigmoid"},
    {Op::Tanh, "tanh"},       {Op::Softmax, "softmax"}, {Op::Add, "add"},
    {Op::Sub, "sub"},         {Op::Mul, "mul"},         {Op::Sum, "sum"},
    {Op::Mean, "mean"},       {Op::Log, "log"},         {Op::Exp, "exp"},
    {Op::Concat, "concat"},   {Op::Slice, "slice"},     {Op::Square, "square"},
    {Op::Scale, "scale"},     {Op::Reshape, "reshape"}, {Op::LogProb, "log_prob"},
    {Op::LogMeanExp, "log_mean_exp"},
};

bool is_scalar(const Shape& s) { return numel(s) == 1; }

// Shape of a binary elementwise result; a single-element operand broadcasts.
std::optional<Shape> broadcast_shape(const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (numel(a) == numel(b) && is_scalar(a)) return b.size() >= a.size() ? b : a;
  if (is_scalar(b)) return a;
  if (is_scalar(a)) return b;
  return std::nullopt;
}

}  // namespace

std::string_view to_string(NodeKind k) {
  for (auto [kind, name] : kKindNames)
    if (kind == k) return name;
  return "?";
}

std::string_view to_string(Op op) {
  for (auto [o, name] : kOpNames)
    if (o == op) return name;
  return "?";
}

NodeKind node_kind_from_string(std::string_view s) {
  for (auto [kind, name] : kKindNames)
    if (name == s) return kind;
  throw Error("unknown node kind '" + std::string(s) + "'");
}

Op op_from_string(std::string_view s) {
  for (auto [o, name] : kOpNames)
    if (name == s) return o;
  throw Error("unknown op '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Graph construction

const Node& Graph::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw Error("unknown node id " + std::to_string(id));
  }
  return nodes_[static_cast<std::size_t>(id)];
}

NodeId Graph::add_node(const NodeSpec& spec) {
  for (NodeId p : spec.parents) {
    if (p < 0 || static_cast<std::size_t>(p) >= nodes_.size()) {
      throw Error("unknown parent id " + std::to_string(p));
    }
  }
  auto parent_shape = [&](std::size_t i) -> const Shape& { return nodes_[spec.parents[i]].shape; };
  auto need_parents = [&](std::size_t n) {
    if (spec.parents.size() != n) {
      throw Error(std::string(to_string(spec.kind)) + "/" + std::string(to_string(spec.op)) + " expects " +
                  std::to_string(n) + " parent(s), got " + std::to_string(spec.parents.size()));
    }
  };
  auto mismatch = [&](const std::string& detail) {
    return Error("shape mismatch in " + std::string(to_string(spec.op)) + ": " + detail);
  };

  Node n;
  n.id = static_cast<NodeId>(nodes_.size());
  n.kind = spec.kind;
  n.op = spec.kind == NodeKind::Deterministic ? spec.op : Op::None;
  n.dist = spec.dist;
  n.parents = spec.parents;
  n.name = spec.name;
  n.scale = spec.scale;
  n.begin = spec.begin;
  n.end = spec.end;

  switch (spec.kind) {
    case NodeKind::Input:
    case NodeKind::Parameter:
      need_parents(0);
      n.shape = spec.shape;
      break;
    case NodeKind::Stochastic: {
      need_parents(1);
      n.shape = parent_shape(0);
      if (spec.dist == Dist::Categorical && n.shape.empty()) throw Error("categorical logits need rank >= 1");
      break;
    }
    case NodeKind::StopGradient:
      need_parents(1);
      n.shape = parent_shape(0);
      break;
    case NodeKind::Cost:
      need_parents(1);
      if (!is_scalar(parent_shape(0))) throw Error("cost must be scalar, got " + shape_string(parent_shape(0)));
      n.shape = Shape{};
      break;
    case NodeKind::Deterministic:
      switch (spec.op) {
        case Op::None:
          throw Error("deterministic node needs an op");
        case Op::Affine: {
          need_parents(3);
          const Shape& x = parent_shape(0);
          const Shape& w = parent_shape(1);
          const Shape& b = parent_shape(2);
          if (w.size() != 2 || x.size() != 1 || w[1] != x[0]) {
            throw mismatch("weight " + shape_string(w) + " vs input " + shape_string(x));
          }
          if (b != Shape{w[0]}) throw mismatch("bias " + shape_string(b) + " vs weight " + shape_string(w));
          n.shape = Shape{w[0]};
          break;
        }
        case Op::Sigmoid:
        case Op::Tanh:
        case Op::Log:
        case Op::Exp:
        case Op::Square:
        case Op::Scale:
          need_parents(1);
          n.shape = parent_shape(0);
          break;
        case Op::Softmax:
          need_parents(1);
          if (parent_shape(0).empty()) throw mismatch("softmax needs rank >= 1");
          n.shape = parent_shape(0);
          break;
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
          need_parents(2);
          auto s = broadcast_shape(parent_shape(0), parent_shape(1));
          if (!s) throw mismatch(shape_string(parent_shape(0)) + " vs " + shape_string(parent_shape(1)));
          n.shape = *s;
          break;
        }
        case Op::Sum:
        case Op::Mean:
        case Op::LogMeanExp:
          need_parents(1);
          if (numel(parent_shape(0)) == 0) throw mismatch("reduction over empty tensor");
          n.shape = Shape{};
          break;
        case Op::Concat: {
          if (spec.parents.empty()) throw Error("concat needs at least one parent");
          std::size_t total = 0;
          for (std::size_t i = 0; i < spec.parents.size(); ++i) total += numel(parent_shape(i));
          n.shape = Shape{total};
          break;
        }
        case Op::Slice:
          need_parents(1);
          if (spec.begin >= spec.end || spec.end > numel(parent_shape(0))) {
            throw mismatch("range [" + std::to_string(spec.begin) + "," + std::to_string(spec.end) +
                           ") outside " + shape_string(parent_shape(0)));
          }
          n.shape = Shape{spec.end - spec.begin};
          break;
        case Op::Reshape:
          need_parents(1);
          if (numel(spec.shape) != numel(parent_shape(0))) {
            throw mismatch(shape_string(parent_shape(0)) + " to " + shape_string(spec.shape));
          }
          n.shape = spec.shape;
          break;
        case Op::LogProb:
          need_parents(2);
          if (numel(parent_shape(0)) != numel(parent_shape(1))) {
            throw mismatch("logits " + shape_string(parent_shape(0)) + " vs value " + shape_string(parent_shape(1)));
          }
          if (spec.dist == Dist::Categorical && parent_shape(0).empty()) throw mismatch("categorical logits rank 0");
          n.shape = Shape{};
          break;
      }
      break;
  }

  nodes_.push_back(std::move(n));
  const NodeId id = nodes_.back().id;
  switch (spec.kind) {
    case NodeKind::Input: inputs_.push_back(id); break;
    case NodeKind::Parameter: parameters_.push_back(id); break;
    case NodeKind::Stochastic: stochastic_.push_back(id); break;
    case NodeKind::Cost: cost_ = id; break;
    default: break;
  }
  return id;
}

NodeId Graph::input(std::string name, Shape shape) {
  return add_node({.kind = NodeKind::Input, .shape = std::move(shape), .name = std::move(name)});
}

NodeId Graph::parameter(std::string name, Shape shape) {
  return add_node({.kind = NodeKind::Parameter, .shape = std::move(shape), .name = std::move(name)});
}

NodeId Graph::affine(NodeId x, NodeId weight, NodeId bias) {
  return add_node({.op = Op::Affine, .parents = {x, weight, bias}});
}

NodeId Graph::unary(Op op, NodeId x) { return add_node({.op = op, .parents = {x}}); }

NodeId Graph::binary(Op op, NodeId a, NodeId b) { return add_node({.op = op, .parents = {a, b}}); }

NodeId Graph::scale(NodeId x, double c) { return add_node({.op = Op::Scale, .parents = {x}, .scale = c}); }

NodeId Graph::concat(std::vector<NodeId> parts) { return add_node({.op = Op::Concat, .parents = std::move(parts)}); }

NodeId Graph::slice(NodeId x, std::size_t begin, std::size_t end) {
  return add_node({.op = Op::Slice, .parents = {x}, .begin = begin, .end = end});
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  return add_node({.op = Op::Reshape, .parents = {x}, .shape = std::move(shape)});
}

NodeId Graph::log_prob(Dist dist, NodeId logits, NodeId value) {
  return add_node({.op = Op::LogProb, .dist = dist, .parents = {logits, value}});
}

NodeId Graph::bernoulli(NodeId logits, std::string name) {
  return add_node({.kind = NodeKind::Stochastic, .dist = Dist::Bernoulli, .parents = {logits}, .name = std::move(name)});
}

NodeId Graph::categorical(NodeId logits, std::string name) {
  return add_node(
      {.kind = NodeKind::Stochastic, .dist = Dist::Categorical, .parents = {logits}, .name = std::move(name)});
}

NodeId Graph::stop_gradient(NodeId x) { return add_node({.kind = NodeKind::StopGradient, .parents = {x}}); }

NodeId Graph::cost(NodeId x, std::string name) {
  return add_node({.kind = NodeKind::Cost, .parents = {x}, .name = std::move(name)});
}

std::optional<NodeId> Graph::find(std::string_view name) const {
  for (const auto& n : nodes_)
    if (n.name == name) return n.id;
  return std::nullopt;
}

bool Graph::is_ancestor(NodeId ancestor, NodeId node) const {
  if (ancestor >= node) return false;
  std::vector<char> reach(nodes_.size(), 0);
  reach[static_cast<std::size_t>(ancestor)] = 1;
  for (auto id = static_cast<std::size_t>(ancestor) + 1; id <= static_cast<std::size_t>(node); ++id) {
    for (NodeId p : nodes_[id].parents) {
      if (reach[static_cast<std::size_t>(p)]) {
        reach[id] = 1;
        break;
      }
    }
  }
  return reach[static_cast<std::size_t>(node)] != 0;
}

bool Trace::is_pinned(NodeId id) const { return std::find(pinned.begin(), pinned.end(), id) != pinned.end(); }

// ---------------------------------------------------------------------------
// Forward

namespace {

double logsumexp(std::span<const double> v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

Tensor eval_elementwise(Op op, const Tensor& a, const Tensor& b, const Shape& out_shape) {
  Tensor out(out_shape);
  const bool a1 = a.size() == 1, b1 = b.size() == 1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x = a1 ? a[0] : a[i];
    const double y = b1 ? b[0] : b[i];
    out[i] = op == Op::Add ? x + y : op == Op::Sub ? x - y : x * y;
  }
  return out;
}

Tensor eval_deterministic(const Node& n, const std::vector<Tensor>& v) {
  auto in = [&](std::size_t i) -> const Tensor& { return v[static_cast<std::size_t>(n.parents[i])]; };
  Tensor out(n.shape);
  switch (n.op) {
    case Op::Affine: {
      const Tensor& x = in(0);
      const Tensor& w = in(1);
      const Tensor& b = in(2);
      const std::size_t rows = w.shape()[0], cols = w.shape()[1];
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = b[r];
        for (std::size_t c = 0; c < cols; ++c) acc += w[r * cols + c] * x[c];
        out[r] = acc;
      }
      break;
    }
    case Op::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid(in(0)[i]);
      break;
    case Op::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(in(0)[i]);
      break;
    case Op::Softmax:
      out = dist_mean(Dist::Categorical, in(0));
      break;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
      out = eval_elementwise(n.op, in(0), in(1), n.shape);
      break;
    case Op::Sum:
    case Op::Mean: {
      double acc = 0.0;
      for (double x : in(0).data()) acc += x;
      out[0] = n.op == Op::Sum ? acc : acc / static_cast<double>(in(0).size());
      break;
    }
    case Op::Log:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(in(0)[i]);
      break;
    case Op::Exp:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(in(0)[i]);
      break;
    case Op::Square:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = in(0)[i] * in(0)[i];
      break;
    case Op::Scale:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = n.scale * in(0)[i];
      break;
    case Op::Concat: {
      std::size_t off = 0;
      for (std::size_t p = 0; p < n.parents.size(); ++p) {
        for (double x : in(p).data()) out[off++] = x;
      }
      break;
    }
    case Op::Slice:
      for (std::size_t i = n.begin; i < n.end; ++i) out[i - n.begin] = in(0)[i];
      break;
    case Op::Reshape:
      out = in(0).reshaped(n.shape);
      break;
    case Op::LogProb: {
      // Algebraic form, linear in the value, so mean-field values are accepted too.
      const Tensor& logits = in(0);
      const Tensor& value = in(1);
      double acc = 0.0;
      if (n.dist == Dist::Bernoulli) {
        for (std::size_t i = 0; i < logits.size(); ++i) acc += value[i] * logits[i] - softplus(logits[i]);
      } else {
        const auto [u, k] = unit_layout(Dist::Categorical, logits.shape());
        for (std::size_t r = 0; r < u; ++r) {
          auto row = logits.data().subspan(r * k, k);
          const double lse = logsumexp(row);
          for (std::size_t c = 0; c < k; ++c) acc += value[r * k + c] * (row[c] - lse);
        }
      }
      out[0] = acc;
      break;
    }
    case Op::LogMeanExp:
      out[0] = logsumexp(in(0).data()) - std::log(static_cast<double>(in(0).size()));
      break;
    case Op::None:
      throw Error("deterministic node without op");
  }
  return out;
}

enum class StochasticPolicy { Sample, Mean, Forced };

Trace evaluate(const Graph& graph, const ValueMap& inputs, const ValueMap& params, Mode mode, std::uint64_t seed,
               const ValueMap* prescribed) {
  Trace trace;
  trace.mode = mode;
  trace.rng_seed = mode == Mode::Stochastic ? seed : 0;
  trace.values.reserve(graph.size());

  for (const Node& n : graph.nodes()) {
    Tensor value;
    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Parameter: {
        const ValueMap& source = n.kind == NodeKind::Input ? inputs : params;
        auto it = source.find(n.id);
        if (it == source.end()) {
          throw Error(std::string(n.kind == NodeKind::Input ? "unbound input" : "unbound parameter") + " node " +
                      std::to_string(n.id) + (n.name.empty() ? "" : " (" + n.name + ")"));
        }
        if (it->second.size() != numel(n.shape)) {
          throw Error("value for node " + std::to_string(n.id) + " has shape " + shape_string(it->second.shape()) +
                      ", expected " + shape_string(n.shape));
        }
        value = it->second.reshaped(n.shape);
        break;
      }
      case NodeKind::Deterministic:
        value = eval_deterministic(n, trace.values);
        break;
      case NodeKind::StopGradient:
      case NodeKind::Cost:
        value = trace.values[static_cast<std::size_t>(n.parents[0])].reshaped(n.shape);
        break;
      case NodeKind::Stochastic: {
        const Tensor& logits = trace.values[static_cast<std::size_t>(n.parents[0])];
        const ValueMap::const_iterator fixed =
            prescribed ? prescribed->find(n.id) : ValueMap::const_iterator{};
        if (prescribed && fixed != prescribed->end()) {
          if (fixed->second.size() != logits.size()) {
            throw Error("prescribed value for node " + std::to_string(n.id) + " has wrong size");
          }
          value = fixed->second.reshaped(n.shape);
          trace.pinned.push_back(n.id);
          if (mode == Mode::Stochastic) check_support(n.dist, logits, value);
        } else if (mode == Mode::Stochastic) {
          if (prescribed) throw Error("no prescribed outcome for stochastic node " + std::to_string(n.id));
          CounterRng rng(derive_key(seed, static_cast<std::uint64_t>(n.id)));
          value = dist_sample(n.dist, logits, rng);
        } else {
          value = dist_mean(n.dist, logits);
        }
        if (mode == Mode::Stochastic) trace.logprobs[n.id] = dist_log_prob(n.dist, logits, value);
        break;
      }
    }
    if (!value.all_finite()) {
      throw NumericError(n.id, "non-finite value produced at node " + std::to_string(n.id) +
                                   (n.name.empty() ? "" : " (" + n.name + ")") + " [" +
                                   std::string(n.kind == NodeKind::Deterministic ? to_string(n.op)
                                                                                 : to_string(n.kind)) +
                                   "]");
    }
    trace.values.push_back(std::move(value));
  }
  return trace;
}

}  // namespace

Trace forward(const Graph& graph, const ValueMap& inputs, const ValueMap& params, Mode mode,
              std::optional<std::uint64_t> seed) {
  if (mode == Mode::Stochastic && !seed) throw Error("stochastic forward requires an rng seed");
  if (mode == Mode::MeanField && seed) throw Error("mean-field forward takes no rng seed");
  return evaluate(graph, inputs, params, mode, seed.value_or(0), nullptr);
}

Trace forward_forced(const Graph& graph, const ValueMap& inputs, const ValueMap& params, const ValueMap& outcomes) {
  Trace t = evaluate(graph, inputs, params, Mode::Stochastic, 0, &outcomes);
  // Forced outcomes behave exactly like samples, so they are not reported as pinned.
  t.pinned.clear();
  return t;
}

Trace forward_branch(const Graph& graph, const ValueMap& inputs, const ValueMap& params, const ValueMap& pinned) {
  return evaluate(graph, inputs, params, Mode::MeanField, 0, &pinned);
}

// ---------------------------------------------------------------------------
// Backward

const Tensor& stochastic_logits(const Graph& graph, const Trace& trace, NodeId node) {
  const Node& n = graph.node(node);
  if (n.kind != NodeKind::Stochastic) throw Error("node " + std::to_string(node) + " is not stochastic");
  return trace.value(n.parents[0]);
}

Tensor stochastic_mean(const Graph& graph, const Trace& trace, NodeId node) {
  return dist_mean(graph.node(node).dist, stochastic_logits(graph, trace, node));
}

std::vector<Tensor> backward(const Graph& graph, const Trace& trace, const ValueMap& seeds,
                             const SampleVjp& through_samples) {
  if (trace.values.size() != graph.size()) throw Error("trace does not cover the graph");
  const std::size_t count = graph.size();
  std::vector<Tensor> adj(count);
  std::vector<char> live(count, 0);

  auto accumulate = [&](NodeId id, const Tensor& g) {
    const auto i = static_cast<std::size_t>(id);
    if (!live[i]) {
      adj[i] = g.reshaped(graph.node(id).shape);
      live[i] = 1;
    } else {
      adj[i] += g;
    }
  };
  for (const auto& [id, g] : seeds) {
    if (g.size() != numel(graph.node(id).shape)) {
      throw Error("seed for node " + std::to_string(id) + " has wrong size");
    }
    accumulate(id, g);
  }

  for (std::size_t idx = count; idx-- > 0;) {
    if (!live[idx]) continue;
    const Node& n = graph.nodes()[idx];
    const Tensor& g = adj[idx];
    auto val = [&](std::size_t i) -> const Tensor& { return trace.values[static_cast<std::size_t>(n.parents[i])]; };

    switch (n.kind) {
      case NodeKind::Input:
      case NodeKind::Parameter:
      case NodeKind::StopGradient:
        break;
      case NodeKind::Cost:
        accumulate(n.parents[0], g);
        break;
      case NodeKind::Stochastic: {
        const Tensor& logits = val(0);
        const bool sampled = trace.mode == Mode::Stochastic || trace.is_pinned(n.id);
        if (!sampled) {
          accumulate(n.parents[0], dist_mean_vjp(n.dist, logits, g));
        } else if (through_samples && !trace.is_pinned(n.id)) {
          accumulate(n.parents[0], through_samples(n, logits, trace.values[idx], g));
        }
        break;
      }
      case NodeKind::Deterministic: {
        const Tensor& out = trace.values[idx];
        switch (n.op) {
          case Op::Affine: {
            const Tensor& x = val(0);
            const Tensor& w = val(1);
            const std::size_t rows = w.shape()[0], cols = w.shape()[1];
            Tensor gx(x.shape()), gw(w.shape());
            for (std::size_t r = 0; r < rows; ++r) {
              for (std::size_t c = 0; c < cols; ++c) {
                gx[c] += w[r * cols + c] * g[r];
                gw[r * cols + c] = g[r] * x[c];
              }
            }
            accumulate(n.parents[0], gx);
            accumulate(n.parents[1], gw);
            accumulate(n.parents[2], g);
            break;
          }
          case Op::Sigmoid: {
            Tensor gx(out.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * out[i] * (1.0 - out[i]);
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::Tanh: {
            Tensor gx(out.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * (1.0 - out[i] * out[i]);
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::Softmax:
            accumulate(n.parents[0], dist_mean_vjp(Dist::Categorical, val(0), g));
            break;
          case Op::Add:
          case Op::Sub:
          case Op::Mul: {
            const Tensor& a = val(0);
            const Tensor& b = val(1);
            Tensor ga(a.shape()), gb(b.shape());
            const bool a1 = a.size() == 1 && out.size() != 1, b1 = b.size() == 1 && out.size() != 1;
            for (std::size_t i = 0; i < out.size(); ++i) {
              const double x = a1 ? a[0] : a[i];
              const double y = b1 ? b[0] : b[i];
              double da = g[i], db = g[i];
              if (n.op == Op::Sub) db = -g[i];
              if (n.op == Op::Mul) {
                da = g[i] * y;
                db = g[i] * x;
              }
              (a1 ? ga[0] : ga[i]) += da;
              (b1 ? gb[0] : gb[i]) += db;
            }
            accumulate(n.parents[0], ga);
            accumulate(n.parents[1], gb);
            break;
          }
          case Op::Sum:
          case Op::Mean: {
            const double s = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(val(0).size());
            accumulate(n.parents[0], Tensor(val(0).shape(), s));
            break;
          }
          case Op::Log: {
            Tensor gx(out.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] / val(0)[i];
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::Exp: {
            Tensor gx(out.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * out[i];
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::Square: {
            Tensor gx(out.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = 2.0 * g[i] * val(0)[i];
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::Scale:
            accumulate(n.parents[0], g * n.scale);
            break;
          case Op::Concat: {
            std::size_t off = 0;
            for (std::size_t p = 0; p < n.parents.size(); ++p) {
              Tensor gp(val(p).shape());
              for (std::size_t i = 0; i < gp.size(); ++i) gp[i] = g[off + i];
              off += gp.size();
              accumulate(n.parents[p], gp);
            }
            break;
          }
          case Op::Slice: {
            Tensor gx(val(0).shape());
            for (std::size_t i = n.begin; i < n.end; ++i) gx[i] = g[i - n.begin];
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::Reshape:
            accumulate(n.parents[0], g);
            break;
          case Op::LogProb: {
            const Tensor& logits = val(0);
            const Tensor& value = val(1);
            Tensor gl(logits.shape()), gv(value.shape());
            if (n.dist == Dist::Bernoulli) {
              for (std::size_t i = 0; i < logits.size(); ++i) {
                gl[i] = g[0] * (value[i] - sigmoid(logits[i]));
                gv[i] = g[0] * logits[i];
              }
            } else {
              const auto [u, k] = unit_layout(Dist::Categorical, logits.shape());
              for (std::size_t r = 0; r < u; ++r) {
                auto row = logits.data().subspan(r * k, k);
                const double lse = logsumexp(row);
                double mass = 0.0;
                for (std::size_t c = 0; c < k; ++c) mass += value[r * k + c];
                for (std::size_t c = 0; c < k; ++c) {
                  gl[r * k + c] = g[0] * (value[r * k + c] - mass * std::exp(row[c] - lse));
                  gv[r * k + c] = g[0] * (row[c] - lse);
                }
              }
            }
            accumulate(n.parents[0], gl);
            accumulate(n.parents[1], gv);
            break;
          }
          case Op::LogMeanExp: {
            const Tensor& x = val(0);
            const double lse = logsumexp(x.data());
            Tensor gx(x.shape());
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[0] * std::exp(x[i] - lse);
            accumulate(n.parents[0], gx);
            break;
          }
          case Op::None:
            break;
        }
        break;
      }
    }
  }

  for (std::size_t i = 0; i < count; ++i) {
    if (!live[i]) adj[i] = Tensor(graph.nodes()[i].shape);
  }
  return adj;
}

GradMap gradients(const Graph& graph, NodeId cost, std::span<const NodeId> wrt, const Trace& trace) {
  const Node& c = graph.node(cost);
  if (numel(c.shape) != 1) throw Error("gradients: cost node " + std::to_string(cost) + " is not scalar");
  ValueMap seeds;
  seeds.emplace(cost, Tensor(c.shape, 1.0));
  auto adj = backward(graph, trace, seeds);
  GradMap out;
  for (NodeId id : wrt) {
    graph.node(id);
    out[id] = adj[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace muprop
