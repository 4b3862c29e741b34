#include "muprop/fixtures.hpp"

#include <cmath>

#include "muprop/oracle.hpp"
#include "muprop/rng.hpp"

namespace muprop::fixtures {

namespace {

Tensor random_tensor(CounterRng& rng, Shape shape, double scale) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

std::size_t pick(CounterRng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.next_u64() % (hi - lo + 1));
}

/// Builder state for random graphs.
struct Builder {
  TestProblem out;
  CounterRng rng;
  int param_count = 0;

  explicit Builder(std::uint64_t seed) : rng(seed) {}

  NodeId param(Shape shape, double scale) {
    const NodeId id = out.graph.parameter("p" + std::to_string(param_count++), shape);
    out.params.emplace(id, random_tensor(rng, std::move(shape), scale));
    return id;
  }

  NodeId input(const std::string& name, Tensor value) {
    const NodeId id = out.graph.input(name, value.shape());
    out.inputs.emplace(id, std::move(value));
    return id;
  }

  NodeId dense(NodeId x, std::size_t width) {
    const std::size_t in = numel(out.graph.node(x).shape);
    const double scale = 1.2 / std::sqrt(static_cast<double>(in));
    const NodeId w = param(Shape{width, in}, scale);
    const NodeId b = param(Shape{width}, 0.5);
    return out.graph.affine(x, w, b);
  }

  NodeId flat(NodeId x) {
    const Shape& s = out.graph.node(x).shape;
    return s.size() == 1 ? x : out.graph.reshape(x, Shape{numel(s)});
  }

  NodeId features(const std::vector<NodeId>& nodes) {
    if (nodes.size() == 1) return flat(nodes[0]);
    std::vector<NodeId> parts;
    for (NodeId n : nodes) parts.push_back(flat(n));
    return out.graph.concat(parts);
  }
};

}  // namespace

TestProblem single_unit(UnitCost cost, double logit, double constant) {
  TestProblem p;
  Graph& g = p.graph;
  const NodeId theta = g.parameter("theta", Shape{1});
  const NodeId x = g.bernoulli(theta, "x");
  NodeId f = -1;
  switch (cost) {
    case UnitCost::Linear:
      f = g.sum(x);
      p.name = "single-unit f=x";
      break;
    case UnitCost::Square:
      f = g.sum(g.square(x));
      p.name = "single-unit f=x^2";
      break;
    case UnitCost::Cube:
      f = g.sum(g.mul(g.square(x), x));
      p.name = "single-unit f=x^3";
      break;
    case UnitCost::Constant: {
      const NodeId c = g.input("c", Shape{1});
      p.inputs.emplace(c, Tensor::vector({constant}));
      f = g.sum(g.add(g.scale(x, 0.0), c));
      p.name = "single-unit f=const";
      break;
    }
  }
  p.cost = g.cost(f);
  p.params.emplace(theta, Tensor::vector({logit}));
  return p;
}

TestProblem single_unit_quadratic(double a, double b, double c, double logit) {
  TestProblem p;
  Graph& g = p.graph;
  const NodeId theta = g.parameter("theta", Shape{1});
  const NodeId ca = g.input("a", Shape{1});
  const NodeId cb = g.input("b", Shape{1});
  const NodeId cc = g.input("c", Shape{1});
  const NodeId x = g.bernoulli(theta, "x");
  const NodeId poly = g.add(g.add(g.mul(ca, g.square(x)), g.mul(cb, x)), cc);
  p.cost = g.cost(g.sum(poly));
  p.inputs.emplace(ca, Tensor::vector({a}));
  p.inputs.emplace(cb, Tensor::vector({b}));
  p.inputs.emplace(cc, Tensor::vector({c}));
  p.params.emplace(theta, Tensor::vector({logit}));
  p.name = "single-unit quadratic";
  return p;
}

TestProblem single_categorical(std::vector<double> logits) {
  TestProblem p;
  Graph& g = p.graph;
  const std::size_t k = logits.size();
  const NodeId theta = g.parameter("theta", Shape{1, k});
  const NodeId x = g.categorical(theta, "x");
  p.cost = g.cost(g.sum(g.slice(g.reshape(x, Shape{k}), 0, 1)));
  p.params.emplace(theta, Tensor(Shape{1, k}, std::move(logits)));
  p.name = "single categorical f=x_1";
  return p;
}

TestProblem independent_product(std::vector<double> logits) {
  TestProblem p;
  Graph& g = p.graph;
  NodeId prod = -1;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const NodeId theta = g.parameter("theta" + std::to_string(i), Shape{1});
    p.params.emplace(theta, Tensor::vector({logits[i]}));
    const NodeId x = g.bernoulli(theta);
    prod = prod < 0 ? x : g.mul(prod, x);
  }
  p.cost = g.cost(g.sum(prod));
  p.name = "independent product";
  return p;
}

namespace {

TestProblem random_problem_once(std::uint64_t seed, const RandomFamilyOptions& opt) {
  Builder b(seed);
  Graph& g = b.out.graph;
  CounterRng& rng = b.rng;

  const std::size_t input_dim = pick(rng, 1, 3);
  const NodeId x0 = b.input("x0", random_tensor(rng, Shape{input_dim}, 1.0));
  const int layers = static_cast<int>(pick(rng, static_cast<std::size_t>(opt.min_layers),
                                           static_cast<std::size_t>(opt.max_layers)));

  // 0 Bernoulli only, 1 categorical only, 2 mixed
  int family = 0;
  if (opt.allow_categorical) {
    const double u = rng.uniform();
    family = u < 0.55 ? 0 : (u < 0.8 ? 1 : 2);
  }
  int branch_layer = -1;
  if (opt.allow_branches && !opt.chains_only && rng.uniform() < 0.35) {
    branch_layer = static_cast<int>(pick(rng, 1, static_cast<std::size_t>(layers)));
  }

  std::size_t binary_units = 0, categorical_cells = 0;
  std::vector<NodeId> prev{x0};
  std::vector<NodeId> first_layer;
  std::string shape_desc;
  for (int layer = 1; layer <= layers; ++layer) {
    NodeId feat = b.features(prev);
    if (rng.uniform() < 0.3) feat = g.tanh(b.dense(feat, pick(rng, 2, 3)));
    const int width = layer == branch_layer ? 2 : 1;
    std::vector<NodeId> current;
    for (int j = 0; j < width; ++j) {
      bool categorical = family == 1 || (family == 2 && rng.uniform() < 0.5);
      if (categorical && categorical_cells + 2 > opt.max_categorical_cells) categorical = false;
      if (!categorical && binary_units + 1 > opt.max_binary_units) categorical = true;
      NodeId node;
      if (categorical) {
        std::size_t k = pick(rng, 2, 3);
        std::size_t units = pick(rng, 1, 2);
        while (units > 1 && categorical_cells + units * k > opt.max_categorical_cells) --units;
        if (categorical_cells + units * k > opt.max_categorical_cells) k = 2;
        categorical_cells += units * k;
        const NodeId logits = g.reshape(b.dense(feat, units * k), Shape{units, k});
        node = g.categorical(logits);
        shape_desc += std::to_string(units) + "x" + std::to_string(k) + "c";
      } else {
        std::size_t units = pick(rng, 1, 3);
        while (units > 1 && binary_units + units > opt.max_binary_units) --units;
        binary_units += units;
        node = g.bernoulli(b.dense(feat, units));
        shape_desc += std::to_string(units) + "b";
      }
      shape_desc += j + 1 < width ? "|" : (layer < layers ? "-" : "");
      current.push_back(node);
    }
    if (layer == 1) first_layer = current;
    prev = current;
  }

  const std::size_t out_dim = pick(rng, 1, 3);
  const NodeId t = b.dense(b.features(prev), out_dim);
  const std::size_t variant = pick(rng, 0, 2);
  NodeId f;
  if (variant == 0) {
    const NodeId target = b.input("target", random_tensor(rng, Shape{out_dim}, 1.0));
    f = g.sum(g.square(g.sub(t, target)));
  } else if (variant == 1) {
    Tensor y(Shape{out_dim});
    for (std::size_t i = 0; i < out_dim; ++i) y[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const NodeId target = b.input("y", std::move(y));
    f = g.scale(g.log_prob(Dist::Bernoulli, t, target), -1.0);
  } else {
    f = g.sum(g.mul(t, g.sigmoid(t)));
  }
  if (layers > 1 && rng.uniform() < 0.3) {
    f = g.add(f, g.scale(g.sum(g.square(b.features(first_layer))), 0.5));
  }
  b.out.cost = g.cost(f);
  b.out.name = "random[" + shape_desc + "] seed=" + std::to_string(seed);
  return std::move(b.out);
}

}  // namespace

TestProblem random_problem(std::uint64_t seed, const RandomFamilyOptions& options) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    TestProblem p = random_problem_once(derive_key(seed, attempt), options);
    if (configuration_count(p.graph) <= options.max_configurations) return p;
  }
}

std::vector<TestProblem> random_problem_family(std::uint64_t seed, std::size_t count,
                                               const RandomFamilyOptions& options) {
  std::vector<TestProblem> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(random_problem(derive_key(seed, 0xFA11, i), options));
  return out;
}

TestProblem random_deterministic_problem(std::uint64_t seed) {
  Builder b(derive_key(seed, 0xDE7));
  Graph& g = b.out.graph;
  CounterRng& rng = b.rng;

  const std::size_t input_dim = pick(rng, 2, 4);
  NodeId h = b.input("x0", random_tensor(rng, Shape{input_dim}, 1.0));
  const std::size_t depth = pick(rng, 1, 3);
  for (std::size_t l = 0; l < depth; ++l) {
    const std::size_t width = pick(rng, 2, 4);
    NodeId a = b.dense(h, width);
    switch (pick(rng, 0, 5)) {
      case 0: h = g.sigmoid(a); break;
      case 1: h = g.tanh(a); break;
      case 2: h = g.softmax(a); break;
      case 3: h = g.mul(g.sigmoid(a), g.tanh(a)); break;
      case 4: h = g.exp(g.scale(g.tanh(a), 0.5)); break;
      default: {
        const NodeId s = g.sigmoid(a);
        h = g.concat({g.slice(s, 0, 1), g.square(g.scale(g.slice(a, 1, width), 0.5))});
        break;
      }
    }
  }
  const std::size_t out_dim = pick(rng, 2, 3);
  const NodeId t = b.dense(h, out_dim);
  NodeId f;
  switch (pick(rng, 0, 4)) {
    case 0: {
      const NodeId target = b.input("target", random_tensor(rng, Shape{out_dim}, 1.0));
      f = g.mean(g.square(g.sub(t, target)));
      break;
    }
    case 1: {
      Tensor y(Shape{out_dim});
      for (std::size_t i = 0; i < out_dim; ++i) y[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
      f = g.scale(g.log_prob(Dist::Bernoulli, t, b.input("y", std::move(y))), -1.0);
      break;
    }
    case 2: {
      Tensor y(Shape{1, out_dim});
      y[pick(rng, 0, out_dim - 1)] = 1.0;
      const NodeId logits = g.reshape(t, Shape{1, out_dim});
      f = g.scale(g.log_prob(Dist::Categorical, logits, b.input("y", std::move(y))), -1.0);
      break;
    }
    case 3:
      f = g.scale(g.log_mean_exp(t), -1.0);
      break;
    default:
      f = g.sum(g.log(g.sigmoid(t)));
      break;
  }
  b.out.cost = g.cost(f);
  b.out.name = "deterministic seed=" + std::to_string(seed);
  return std::move(b.out);
}

TestProblem bernoulli_chain(std::uint64_t seed, const std::vector<std::size_t>& widths, std::size_t input_dim,
                            std::size_t output_dim) {
  TestProblem p;
  Graph& g = p.graph;
  CounterRng rng(derive_key(seed, 0xC4A1));

  std::vector<NodeId> weights, biases;
  std::size_t prev_dim = input_dim;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const std::string idx = std::to_string(l + 1);
    weights.push_back(g.parameter("W" + idx, Shape{widths[l], prev_dim}));
    biases.push_back(g.parameter("b" + idx, Shape{widths[l]}));
    p.params.emplace(weights.back(), random_tensor(rng, Shape{widths[l], prev_dim}, 1.0));
    p.params.emplace(biases.back(), random_tensor(rng, Shape{widths[l]}, 0.5));
    prev_dim = widths[l];
  }
  const NodeId v = g.parameter("V", Shape{output_dim, prev_dim});
  const NodeId c = g.parameter("c", Shape{output_dim});
  p.params.emplace(v, random_tensor(rng, Shape{output_dim, prev_dim}, 1.0));
  p.params.emplace(c, random_tensor(rng, Shape{output_dim}, 0.5));

  const NodeId x0 = g.input("x0", Shape{input_dim});
  const NodeId target = g.input("t", Shape{output_dim});
  p.inputs.emplace(x0, random_tensor(rng, Shape{input_dim}, 1.0));
  p.inputs.emplace(target, random_tensor(rng, Shape{output_dim}, 1.0));

  NodeId h = x0;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    h = g.bernoulli(g.affine(h, weights[l], biases[l]), "h" + std::to_string(l + 1));
  }
  p.cost = g.cost(g.sum(g.square(g.sub(g.affine(h, v, c), target))));
  p.name = "bernoulli chain";
  return p;
}

}  // namespace muprop::fixtures
