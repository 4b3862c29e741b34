#include "muprop/models.hpp"

#include <charconv>
#include <cmath>

#include "muprop/rng.hpp"

namespace muprop {

namespace {

std::size_t parse_count(std::string_view s, std::string_view whole) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || v == 0) {
    throw Error("bad layer '" + std::string(s) + "' in architecture '" + std::string(whole) + "'");
  }
  return v;
}

NodeId flat(Graph& g, NodeId x) {
  const Shape& s = g.node(x).shape;
  return s.size() == 1 ? x : g.reshape(x, Shape{numel(s)});
}

/// Shape of the logits feeding a stochastic layer.
Shape logits_shape(const LayerSpec::Layer& l) {
  return l.dist == Dist::Categorical ? Shape{l.units, l.categories} : Shape{l.units};
}

NodeId apply_nonlinearity(Graph& g, Op op, NodeId x) {
  switch (op) {
    case Op::Tanh: return g.tanh(x);
    case Op::Sigmoid: return g.sigmoid(x);
    default: throw Error("unsupported hidden nonlinearity");
  }
}

NodeId stochastic(Graph& g, const LayerSpec::Layer& l, NodeId logits, std::string name) {
  return l.dist == Dist::Categorical ? g.categorical(logits, std::move(name)) : g.bernoulli(logits, std::move(name));
}

struct Affine {
  NodeId w = -1;
  NodeId b = -1;
};

Affine affine_params(Graph& g, const std::string& suffix, std::size_t out, std::size_t in) {
  Affine a;
  a.w = g.parameter("W" + suffix, Shape{out, in});
  a.b = g.parameter("b" + suffix, Shape{out});
  return a;
}

/// Affine map into a layer's logits, reshaped for categorical layers.
NodeId logits_of(Graph& g, const Affine& a, NodeId input, const LayerSpec::Layer& l) {
  const NodeId z = g.affine(flat(g, input), a.w, a.b);
  return l.dist == Dist::Categorical ? g.reshape(z, logits_shape(l)) : z;
}

}  // namespace

LayerSpec LayerSpec::parse(std::string_view text) {
  LayerSpec spec;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t dash = text.find('-', start);
    std::string_view tok = text.substr(start, dash == std::string_view::npos ? std::string_view::npos : dash - start);
    Layer layer;
    if (!tok.empty() && tok.back() == 'd') {
      layer.deterministic = true;
      tok.remove_suffix(1);
    }
    const std::size_t x = tok.find('x');
    if (x != std::string_view::npos) {
      layer.units = parse_count(tok.substr(0, x), text);
      layer.categories = parse_count(tok.substr(x + 1), text);
      layer.dist = Dist::Categorical;
      if (layer.categories < 2) throw Error("categorical layer needs at least 2 categories");
    } else {
      layer.units = parse_count(tok, text);
    }
    spec.layers.push_back(layer);
    if (dash == std::string_view::npos) break;
    start = dash + 1;
  }
  if (spec.layers.size() < 2) throw Error("architecture '" + std::string(text) + "' needs at least two layers");
  return spec;
}

std::string LayerSpec::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) out += '-';
    out += std::to_string(layers[i].units);
    if (layers[i].dist == Dist::Categorical) out += "x" + std::to_string(layers[i].categories);
    if (layers[i].deterministic) out += 'd';
  }
  return out;
}

std::size_t LayerSpec::stochastic_layer_count() const {
  std::size_t n = 0;
  for (const Layer& l : layers) n += l.deterministic ? 0 : 1;
  return n;
}

std::string_view to_string(Task t) { return t == Task::StructuredPrediction ? "structured_prediction" : "variational"; }

Task task_from_string(std::string_view s) {
  if (s == "structured_prediction" || s == "structured") return Task::StructuredPrediction;
  if (s == "variational" || s == "sbn") return Task::Variational;
  throw Error("unknown task '" + std::string(s) + "'");
}

Model build_structured_predictor(const LayerSpec& spec, std::size_t m) {
  if (m == 0) throw Error("structured predictor needs m >= 1");
  const auto& L = spec.layers;
  if (L.size() < 3) throw Error("structured predictor needs input, hidden and output layers");
  if (L.front().dist == Dist::Categorical || L.back().dist == Dist::Categorical || L.back().deterministic) {
    throw Error("input and output layers must be plain binary widths");
  }
  bool any_stochastic = false;
  for (std::size_t l = 1; l + 1 < L.size(); ++l) any_stochastic |= !L[l].deterministic;
  if (!any_stochastic) throw Error("structured predictor needs a stochastic hidden layer");

  Model model;
  model.task = Task::StructuredPrediction;
  model.spec = spec;
  model.samples = m;
  Graph& g = model.graph;

  std::vector<Affine> maps;
  for (std::size_t l = 1; l < L.size(); ++l) {
    const std::size_t out = L[l].deterministic ? L[l].units : L[l].width();
    maps.push_back(affine_params(g, std::to_string(l), out, L[l - 1].width()));
  }
  model.x = g.input("x", Shape{L.front().width()});
  model.y = g.input("y", Shape{L.back().width()});

  std::vector<NodeId> terms;
  for (std::size_t i = 0; i < m; ++i) {
    NodeId h = model.x;
    for (std::size_t l = 1; l + 1 < L.size(); ++l) {
      const Affine& a = maps[l - 1];
      if (L[l].deterministic) {
        h = apply_nonlinearity(g, spec.nonlinearity, g.affine(flat(g, h), a.w, a.b));
      } else {
        h = stochastic(g, L[l], logits_of(g, a, h, L[l]), "h" + std::to_string(l) + "_" + std::to_string(i));
      }
    }
    const NodeId out = g.affine(flat(g, h), maps.back().w, maps.back().b);
    terms.push_back(g.log_prob(Dist::Bernoulli, out, model.y));
  }
  const NodeId lme = m == 1 ? terms[0] : g.log_mean_exp(g.concat(terms));
  model.cost = g.cost(g.scale(lme, -1.0));
  return model;
}

Model build_sbn_variational(const LayerSpec& spec) {
  const auto& L = spec.layers;
  for (const auto& l : L) {
    if (l.deterministic) throw Error("variational model takes stochastic layers only");
  }
  if (L.back().dist == Dist::Categorical) throw Error("observation layer must be binary");
  const std::size_t latent = L.size() - 1;

  Model model;
  model.task = Task::Variational;
  model.spec = spec;
  Graph& g = model.graph;

  // Generative parameters: top prior, then top-down conditionals ending at x.
  const NodeId prior = g.parameter("prior", logits_shape(L[0]));
  model.generative_params.push_back(prior);
  std::vector<Affine> gen;
  for (std::size_t l = 1; l < L.size(); ++l) {
    gen.push_back(affine_params(g, "p" + std::to_string(l), L[l].width(), L[l - 1].width()));
    model.generative_params.push_back(gen.back().w);
    model.generative_params.push_back(gen.back().b);
  }
  // Inference parameters: bottom-up, q[l] produces latent layer l.
  std::vector<Affine> inf(latent);
  for (std::size_t l = latent; l-- > 0;) {
    inf[l] = affine_params(g, "q" + std::to_string(l + 1), L[l].width(), L[l + 1].width());
    model.inference_params.push_back(inf[l].w);
    model.inference_params.push_back(inf[l].b);
  }

  model.x = g.input("x", Shape{L.back().width()});
  std::vector<NodeId> h(latent), q_logits(latent);
  NodeId below = model.x;
  for (std::size_t l = latent; l-- > 0;) {
    q_logits[l] = logits_of(g, inf[l], below, L[l]);
    h[l] = stochastic(g, L[l], q_logits[l], "h" + std::to_string(l + 1));
    below = h[l];
  }

  NodeId log_q = -1, log_p = g.log_prob(L[0].dist, prior, h[0]);
  for (std::size_t l = 0; l < latent; ++l) {
    const NodeId lq = g.log_prob(L[l].dist, q_logits[l], h[l]);
    log_q = log_q < 0 ? lq : g.add(log_q, lq);
    const NodeId next = l + 1 < latent ? h[l + 1] : model.x;
    const NodeId lp = g.log_prob(L[l + 1].dist, logits_of(g, gen[l], h[l], L[l + 1]), next);
    log_p = g.add(log_p, lp);
  }
  model.cost = g.cost(g.scale(g.sub(log_p, log_q), -1.0));
  return model;
}

Model build_model(Task task, const LayerSpec& spec, std::size_t m) {
  return task == Task::StructuredPrediction ? build_structured_predictor(spec, m) : build_sbn_variational(spec);
}

ValueMap init_params(const Model& model, std::uint64_t seed) {
  ValueMap params;
  const Graph& g = model.graph;
  for (NodeId id : g.parameters()) {
    const Node& n = g.node(id);
    Tensor t(n.shape);
    if (n.name.starts_with('W')) {
      CounterRng rng(derive_key(seed, 0x1417, static_cast<std::uint64_t>(id)));
      const double bound = 1.0 / std::sqrt(static_cast<double>(n.shape.at(1)));
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    }
    params.emplace(id, std::move(t));
  }
  return params;
}

ValueMap bind_inputs(const Model& model, const TaskData& data, std::size_t index) {
  ValueMap inputs;
  inputs.emplace(model.x, data.x.at(index));
  if (model.y >= 0) inputs.emplace(model.y, data.y.at(index));
  return inputs;
}

double evaluate_nll(const Model& model, const ValueMap& params, const TaskData& data, std::uint64_t seed,
                    std::size_t m) {
  if (data.size() == 0) throw Error("evaluate_nll on an empty dataset");
  if (m == 0) throw Error("evaluate_nll needs m >= 1");
  const std::size_t repeats = model.task == Task::Variational ? m : 1;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const ValueMap inputs = bind_inputs(model, data, i);
    double acc = 0.0;
    for (std::size_t r = 0; r < repeats; ++r) {
      const Trace t = forward(model.graph, inputs, params, Mode::Stochastic, derive_key(seed, i, r));
      acc += t.value(model.cost).item();
    }
    total += acc / static_cast<double>(repeats);
  }
  return total / static_cast<double>(data.size());
}

}  // namespace muprop
