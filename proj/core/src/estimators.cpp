#include "muprop/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "muprop/rng.hpp"

namespace muprop {

namespace {

constexpr double kProbabilityFloor = 1e-12;

constexpr std::pair<EstimatorKind, std::string_view> kEstimatorNames[] = {
    {EstimatorKind::LR, "lr"},
    {EstimatorKind::MuProp, "muprop"},
    {EstimatorKind::MuPropRollout, "muprop_rollout"},
    {EstimatorKind::ST, "st"},
    {EstimatorKind::Half, "half"},
};

constexpr std::pair<XbarChoice, std::string_view> kXbarNames[] = {
    {XbarChoice::Half, "half"},
    {XbarChoice::InverseK, "inverse_k"},
    {XbarChoice::Mean, "mean"},
};

}  // namespace

std::string_view to_string(EstimatorKind k) {
  for (auto [kind, name] : kEstimatorNames)
    if (kind == k) return name;
  return "?";
}

EstimatorKind estimator_from_string(std::string_view s) {
  for (auto [kind, name] : kEstimatorNames)
    if (name == s) return kind;
  if (s == "1/2") return EstimatorKind::Half;
  if (s == "reinforce") return EstimatorKind::LR;
  throw Error("unknown estimator '" + std::string(s) + "' (expected lr, muprop, muprop_rollout, st, half)");
}

BaselineFlags flags_from_string(std::string_view s) {
  BaselineFlags f;
  std::string token;
  auto flush = [&] {
    if (token.empty() || token == "none") {
    } else if (token == "c") {
      f.center = true;
    } else if (token == "vn") {
      f.variance_norm = true;
    } else if (token == "idb") {
      f.idb = true;
    } else {
      throw Error("unknown baseline flag '" + token + "' (expected c, vn, idb)");
    }
    token.clear();
  };
  for (char ch : s) {
    if (ch == ',' || ch == '-' || ch == '+' || ch == ' ') {
      flush();
    } else {
      token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return f;
}

std::string to_string(BaselineFlags f) {
  std::string out;
  auto add = [&](const char* t) {
    if (!out.empty()) out += ',';
    out += t;
  };
  if (f.center) add("c");
  if (f.variance_norm) add("vn");
  if (f.idb) add("idb");
  return out;
}

std::string_view to_string(XbarChoice x) {
  for (auto [c, name] : kXbarNames)
    if (c == x) return name;
  return "?";
}

XbarChoice xbar_from_string(std::string_view s) {
  for (auto [c, name] : kXbarNames)
    if (name == s) return c;
  if (s == "1/2") return XbarChoice::Half;
  if (s == "1/k") return XbarChoice::InverseK;
  throw Error("unknown xbar choice '" + std::string(s) + "' (expected half, inverse_k, mean)");
}

std::string label(const EstimatorConfig& config) {
  std::string out(to_string(config.kind));
  const bool lr_family = config.kind == EstimatorKind::LR || config.kind == EstimatorKind::MuProp ||
                         config.kind == EstimatorKind::MuPropRollout;
  if (lr_family) {
    if (config.flags.center) out += "-c";
    if (config.flags.variance_norm) out += "-vn";
    if (config.flags.idb) out += "-idb";
  }
  return out;
}

// ---------------------------------------------------------------------------
// IDB network

std::vector<double> IdbNetwork::predict(std::span<const double> x) const {
  const std::size_t h = hidden_size(), in = input_size(), out = output_size();
  if (x.size() != in) throw Error("idb input has size " + std::to_string(x.size()) + ", expected " + std::to_string(in));
  std::vector<double> hidden(h);
  for (std::size_t r = 0; r < h; ++r) {
    double acc = b1[r];
    for (std::size_t c = 0; c < in; ++c) acc += w1[r * in + c] * x[c];
    hidden[r] = std::tanh(acc);
  }
  std::vector<double> y(out);
  for (std::size_t r = 0; r < out; ++r) {
    double acc = b2[r];
    for (std::size_t c = 0; c < h; ++c) acc += w2[r * h + c] * hidden[c];
    y[r] = acc;
  }
  return y;
}

void IdbNetwork::accumulate_gradient(std::span<const double> x, std::span<const double> targets, double scale,
                                     IdbNetwork& grad) const {
  const std::size_t h = hidden_size(), in = input_size(), out = output_size();
  std::vector<double> hidden(h);
  for (std::size_t r = 0; r < h; ++r) {
    double acc = b1[r];
    for (std::size_t c = 0; c < in; ++c) acc += w1[r * in + c] * x[c];
    hidden[r] = std::tanh(acc);
  }
  std::vector<double> dhidden(h, 0.0);
  for (std::size_t r = 0; r < out; ++r) {
    double y = b2[r];
    for (std::size_t c = 0; c < h; ++c) y += w2[r * h + c] * hidden[c];
    const double err = scale * (y - targets[r]);
    grad.b2[r] += err;
    for (std::size_t c = 0; c < h; ++c) {
      grad.w2[r * h + c] += err * hidden[c];
      dhidden[c] += err * w2[r * h + c];
    }
  }
  for (std::size_t r = 0; r < h; ++r) {
    const double da = dhidden[r] * (1.0 - hidden[r] * hidden[r]);
    grad.b1[r] += da;
    for (std::size_t c = 0; c < in; ++c) grad.w1[r * in + c] += da * x[c];
  }
}

// ---------------------------------------------------------------------------
// Baselines

BaselineState BaselineState::create(const Graph& graph, std::vector<NodeId> idb_inputs, std::size_t idb_hidden,
                                    std::uint64_t seed, double decay) {
  if (!(decay > 0.0 && decay < 1.0)) throw Error("baseline decay must lie in (0,1)");
  BaselineState s;
  s.decay = decay;
  s.nodes = graph.stochastic_nodes();
  s.moving_mean.assign(s.nodes.size(), 0.0);
  s.moving_var.assign(s.nodes.size(), 0.0);
  if (idb_inputs.empty()) idb_inputs = graph.inputs();
  s.idb_inputs = std::move(idb_inputs);
  s.idb_hidden = idb_hidden;

  std::size_t in = 0;
  for (NodeId id : s.idb_inputs) in += numel(graph.node(id).shape);
  const std::size_t out = s.nodes.size();
  s.idb.w1 = Tensor(Shape{idb_hidden, in});
  s.idb.b1 = Tensor(Shape{idb_hidden});
  s.idb.w2 = Tensor(Shape{out, idb_hidden});
  s.idb.b2 = Tensor(Shape{out});
  CounterRng rng(derive_key(seed, 0x1DB));
  const double bound = in > 0 ? 1.0 / std::sqrt(static_cast<double>(in)) : 0.0;
  for (std::size_t i = 0; i < s.idb.w1.size(); ++i) s.idb.w1[i] = rng.uniform(-bound, bound);
  return s;
}

std::size_t BaselineState::index_of(NodeId node) const {
  auto it = std::find(nodes.begin(), nodes.end(), node);
  if (it == nodes.end()) throw Error("node " + std::to_string(node) + " has no baseline slot");
  return static_cast<std::size_t>(it - nodes.begin());
}

std::vector<double> idb_features(const BaselineState& state, const Trace& trace) {
  std::vector<double> x;
  for (NodeId id : state.idb_inputs) {
    const auto& v = trace.value(id);
    x.insert(x.end(), v.data().begin(), v.data().end());
  }
  return x;
}

double adjust_signal(const BaselineState& state, std::size_t index, double signal, BaselineFlags flags,
                     double idb_prediction) {
  double s = signal;
  if (flags.center) s -= state.moving_mean.at(index);
  if (flags.idb) s -= idb_prediction;
  if (flags.variance_norm) s /= std::max(1.0, std::sqrt(state.moving_var.at(index)));
  return s;
}

double apply_baselines(double signal, NodeId node, BaselineState& state, BaselineFlags flags,
                       std::span<const double> input_sample) {
  const std::size_t index = state.index_of(node);
  double prediction = 0.0;
  if (flags.idb) prediction = state.idb.predict(input_sample).at(index);
  const double adjusted = adjust_signal(state, index, signal, flags, prediction);

  const double b_old = state.moving_mean[index];
  const double centered = signal - b_old - prediction;
  state.moving_mean[index] = state.decay * b_old + (1.0 - state.decay) * (signal - prediction);
  state.moving_var[index] = state.decay * state.moving_var[index] + (1.0 - state.decay) * centered * centered;
  ++state.observations;
  return adjusted;
}

void idb_update(BaselineState& state, std::span<const double> input_sample, std::span<const double> centered_signal,
                double learning_rate) {
  if (learning_rate == 0.0) return;
  IdbNetwork grad{Tensor::zeros_like(state.idb.w1), Tensor::zeros_like(state.idb.b1),
                  Tensor::zeros_like(state.idb.w2), Tensor::zeros_like(state.idb.b2)};
  // d/dpsi (c - B)^2 = 2 (B - c) dB
  state.idb.accumulate_gradient(input_sample, centered_signal, 2.0, grad);
  state.idb.w1 -= grad.w1 * learning_rate;
  state.idb.b1 -= grad.b1 * learning_rate;
  state.idb.w2 -= grad.w2 * learning_rate;
  state.idb.b2 -= grad.b2 * learning_rate;
}

void update_baselines(BaselineState& state, std::span<const GradientEstimate> batch, BaselineFlags flags,
                      double idb_learning_rate) {
  if (batch.empty()) return;
  const std::size_t n = state.nodes.size();
  const double inv = 1.0 / static_cast<double>(batch.size());
  std::vector<double> mean_signal(n, 0.0), mean_sq(n, 0.0);
  IdbNetwork grad{Tensor::zeros_like(state.idb.w1), Tensor::zeros_like(state.idb.b1),
                  Tensor::zeros_like(state.idb.w2), Tensor::zeros_like(state.idb.b2)};
  bool have_idb_step = false;

  for (const GradientEstimate& e : batch) {
    if (!e.has_learning_signals) continue;
    std::vector<double> targets(n);
    for (std::size_t j = 0; j < n; ++j) {
      const NodeDiagnostics& d = e.nodes[j];
      const double centered = d.raw_signal - state.moving_mean[j] - d.idb_prediction;
      mean_signal[j] += inv * (d.raw_signal - d.idb_prediction);
      mean_sq[j] += inv * centered * centered;
      targets[j] = d.raw_signal - state.moving_mean[j];
    }
    if (flags.idb && idb_learning_rate != 0.0 && !e.idb_input.empty()) {
      state.idb.accumulate_gradient(e.idb_input, targets, 2.0 * inv, grad);
      have_idb_step = true;
    }
  }
  if (!batch.front().has_learning_signals) return;

  for (std::size_t j = 0; j < n; ++j) {
    state.moving_mean[j] = state.decay * state.moving_mean[j] + (1.0 - state.decay) * mean_signal[j];
    state.moving_var[j] = state.decay * state.moving_var[j] + (1.0 - state.decay) * mean_sq[j];
  }
  state.observations += batch.size();
  if (have_idb_step) {
    state.idb.w1 -= grad.w1 * idb_learning_rate;
    state.idb.b1 -= grad.b1 * idb_learning_rate;
    state.idb.w2 -= grad.w2 * idb_learning_rate;
    state.idb.b2 -= grad.b2 * idb_learning_rate;
  }
}

// ---------------------------------------------------------------------------
// Estimators

namespace {

GradMap collect_parameter_grads(const Problem& p, const std::vector<Tensor>& adj) {
  GradMap grads;
  for (NodeId id : p.graph.parameters()) grads.emplace(id, adj[static_cast<std::size_t>(id)]);
  return grads;
}

void require_sample_trace(const Trace& sample) {
  if (sample.mode != Mode::Stochastic) throw Error("estimator needs a stochastic trace");
}

void add_seed(ValueMap& seeds, NodeId id, const Tensor& g) {
  auto [it, inserted] = seeds.try_emplace(id, g);
  if (!inserted) it->second += g;
}

struct Anchor {
  Tensor xbar;    // fixed point for the node
  double fbar;    // cost of the mean-field branch the anchor comes from
  Tensor fprime;  // d fbar / d xbar
};

/// Shared tail of the LR family. With anchors, builds the MuProp surrogate
///   c = f(x) + sum_i [ log p_i * sg(R_i') + mu_i^T sg(f'(xbar_i)) ]
/// where R_i' is the baseline-adjusted residual; without anchors R_i = f(x).
GradientEstimate score_function_estimate(const Problem& p, const Trace& sample, const std::vector<Anchor>* anchors,
                                         const BaselineState* baselines, BaselineFlags flags) {
  require_sample_trace(sample);
  if (flags.any() && baselines == nullptr) throw Error("baseline flags set but no baseline state given");
  const Graph& g = p.graph;
  GradientEstimate est;
  est.cost = sample.value(p.cost).item();
  est.stochastic_passes = 1;
  est.has_learning_signals = true;

  std::vector<double> idb_pred;
  if (flags.idb) {
    est.idb_input = idb_features(*baselines, sample);
    idb_pred = baselines->idb.predict(est.idb_input);
  }

  ValueMap seeds;
  seeds.emplace(p.cost, Tensor(g.node(p.cost).shape, 1.0));
  const auto& stochastic = g.stochastic_nodes();
  for (std::size_t i = 0; i < stochastic.size(); ++i) {
    const NodeId id = stochastic[i];
    const Node& n = g.node(id);
    const Tensor& x = sample.value(id);
    const Tensor& logits = sample.value(n.parents[0]);

    double signal = est.cost;
    if (anchors) {
      const Anchor& a = (*anchors)[i];
      signal = est.cost - a.fbar - dot(a.fprime, x - a.xbar);
    }
    NodeDiagnostics d;
    d.node = id;
    d.raw_signal = signal;
    double adjusted = signal;
    if (flags.any()) {
      const std::size_t slot = baselines->index_of(id);
      d.idb_prediction = flags.idb ? idb_pred.at(slot) : 0.0;
      d.baseline = (flags.center ? baselines->moving_mean.at(slot) : 0.0) + d.idb_prediction;
      adjusted = adjust_signal(*baselines, slot, signal, flags, d.idb_prediction);
    }
    d.adjusted_signal = adjusted;
    est.nodes.push_back(d);

    Tensor seed = dist_score(n.dist, logits, x) * adjusted;
    if (anchors) seed += dist_mean_vjp(n.dist, logits, (*anchors)[i].fprime);
    add_seed(seeds, n.parents[0], seed);
  }

  est.grads = collect_parameter_grads(p, backward(g, sample, seeds));
  return est;
}

void require_stochastic_nodes(const Graph& g) {
  if (g.stochastic_nodes().empty()) throw Error("graph has no stochastic nodes");
}

}  // namespace

Trace sample_trace(const Problem& problem, std::uint64_t seed) {
  return forward(problem.graph, problem.inputs, problem.params, Mode::Stochastic, seed);
}

GradientEstimate lr_estimate(const Problem& problem, const Trace& sample, const BaselineState* baselines,
                             BaselineFlags flags) {
  return score_function_estimate(problem, sample, nullptr, baselines, flags);
}

GradientEstimate muprop_estimate(const Problem& problem, const Trace& sample, const BaselineState* baselines,
                                 BaselineFlags flags) {
  require_stochastic_nodes(problem.graph);
  const Trace mf = forward(problem.graph, problem.inputs, problem.params, Mode::MeanField);
  ValueMap seeds;
  seeds.emplace(problem.cost, Tensor(problem.graph.node(problem.cost).shape, 1.0));
  const auto adj = backward(problem.graph, mf, seeds);
  const double fbar = mf.value(problem.cost).item();

  std::vector<Anchor> anchors;
  for (NodeId id : problem.graph.stochastic_nodes()) {
    anchors.push_back({mf.value(id), fbar, adj[static_cast<std::size_t>(id)]});
  }
  auto est = score_function_estimate(problem, sample, &anchors, baselines, flags);
  est.mean_field_passes = 1;
  return est;
}

GradientEstimate muprop_estimate(const Problem& problem, std::uint64_t seed, const BaselineState* baselines,
                                 BaselineFlags flags) {
  return muprop_estimate(problem, sample_trace(problem, seed), baselines, flags);
}

std::vector<int> stochastic_layers(const Graph& graph) {
  const auto& st = graph.stochastic_nodes();
  std::vector<int> depth(st.size(), 1);
  for (std::size_t i = 0; i < st.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (graph.is_ancestor(st[j], st[i])) depth[i] = std::max(depth[i], depth[j] + 1);
    }
  }
  return depth;
}

GradientEstimate muprop_rollout_estimate(const Problem& problem, const Trace& sample, const BaselineState* baselines,
                                         BaselineFlags flags) {
  require_sample_trace(sample);
  require_stochastic_nodes(problem.graph);
  const Graph& g = problem.graph;
  const auto& st = g.stochastic_nodes();
  const auto depth = stochastic_layers(g);
  const int layers = *std::max_element(depth.begin(), depth.end());

  std::vector<Anchor> anchors(st.size());
  ValueMap seeds;
  seeds.emplace(problem.cost, Tensor(g.node(problem.cost).shape, 1.0));
  for (int layer = 1; layer <= layers; ++layer) {
    ValueMap pinned;
    for (std::size_t i = 0; i < st.size(); ++i)
      if (depth[i] < layer) pinned.emplace(st[i], sample.value(st[i]));
    const Trace branch = forward_branch(g, problem.inputs, problem.params, pinned);
    const auto adj = backward(g, branch, seeds);
    const double fbar = branch.value(problem.cost).item();
    for (std::size_t i = 0; i < st.size(); ++i) {
      if (depth[i] == layer) anchors[i] = {branch.value(st[i]), fbar, adj[static_cast<std::size_t>(st[i])]};
    }
  }
  auto est = score_function_estimate(problem, sample, &anchors, baselines, flags);
  est.mean_field_passes = layers;
  return est;
}

GradientEstimate st_estimate(const Problem& problem, const Trace& sample) {
  require_sample_trace(sample);
  GradientEstimate est;
  est.cost = sample.value(problem.cost).item();
  est.stochastic_passes = 1;
  ValueMap seeds;
  seeds.emplace(problem.cost, Tensor(problem.graph.node(problem.cost).shape, 1.0));
  auto through = [](const Node& n, const Tensor& logits, const Tensor&, const Tensor& adjoint) {
    return dist_mean_vjp(n.dist, logits, adjoint);
  };
  est.grads = collect_parameter_grads(problem, backward(problem.graph, sample, seeds, through));
  return est;
}

namespace {

Tensor half_binary_vjp(const Tensor& logits, const Tensor& value, const Tensor& adjoint, bool& clamped) {
  Tensor out(logits.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double mu = sigmoid(logits[i]);
    double p = value[i] == 1.0 ? mu : 1.0 - mu;
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      clamped = true;
    }
    out[i] = adjoint[i] * mu * (1.0 - mu) / (2.0 * p);
  }
  return out;
}

Tensor half_multinomial_vjp(const Tensor& logits, const Tensor& value, const Tensor& adjoint, XbarChoice xbar,
                            bool& clamped) {
  const auto [u, k] = unit_layout(Dist::Categorical, logits.shape());
  const Tensor mu = dist_mean(Dist::Categorical, logits);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < u; ++r) {
    const std::size_t base = r * k;
    double taylor = 0.0;  // f'(x)^T (x - xbar)
    std::size_t chosen = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double fixed = 0.0;
      switch (xbar) {
        case XbarChoice::Half: fixed = 0.5; break;
        case XbarChoice::InverseK: fixed = 1.0 / static_cast<double>(k); break;
        case XbarChoice::Mean: fixed = mu[base + c]; break;
      }
      taylor += adjoint[base + c] * (value[base + c] - fixed);
      if (value[base + c] == 1.0) chosen = c;
    }
    double p = mu[base + chosen];
    const double mu_c = p;
    if (p < kProbabilityFloor) {
      p = kProbabilityFloor;
      clamped = true;
    }
    // x^T dmu/dlogits = mu_c (e_c - mu)
    for (std::size_t c = 0; c < k; ++c) {
      const double jac = mu_c * ((c == chosen ? 1.0 : 0.0) - mu[base + c]);
      out[base + c] = taylor * jac / p;
    }
  }
  return out;
}

enum class HalfRule { BinaryOnly, MultinomialOnly, Mixed };

GradientEstimate half_impl(const Problem& problem, const Trace& sample, XbarChoice xbar, HalfRule rule) {
  require_sample_trace(sample);
  const Graph& g = problem.graph;
  for (NodeId id : g.stochastic_nodes()) {
    const Dist d = g.node(id).dist;
    if (rule == HalfRule::BinaryOnly && d != Dist::Bernoulli) {
      throw Error("binary 1/2 estimator requires Bernoulli units (node " + std::to_string(id) + ")");
    }
    if (rule == HalfRule::MultinomialOnly && d != Dist::Categorical) {
      throw Error("multinomial 1/2 estimator requires categorical units (node " + std::to_string(id) + ")");
    }
  }
  GradientEstimate est;
  est.cost = sample.value(problem.cost).item();
  est.stochastic_passes = 1;
  std::map<NodeId, bool> clamped;
  auto through = [&](const Node& n, const Tensor& logits, const Tensor& value, const Tensor& adjoint) {
    bool& flag = clamped[n.id];
    return n.dist == Dist::Bernoulli ? half_binary_vjp(logits, value, adjoint, flag)
                                     : half_multinomial_vjp(logits, value, adjoint, xbar, flag);
  };
  ValueMap seeds;
  seeds.emplace(problem.cost, Tensor(g.node(problem.cost).shape, 1.0));
  est.grads = collect_parameter_grads(problem, backward(g, sample, seeds, through));
  for (NodeId id : g.stochastic_nodes()) {
    NodeDiagnostics d;
    d.node = id;
    d.clamped = clamped[id];
    est.nodes.push_back(d);
  }
  return est;
}

}  // namespace

GradientEstimate half_estimate_binary(const Problem& problem, const Trace& sample) {
  return half_impl(problem, sample, XbarChoice::Half, HalfRule::BinaryOnly);
}

GradientEstimate half_estimate_multinomial(const Problem& problem, const Trace& sample, XbarChoice xbar) {
  return half_impl(problem, sample, xbar, HalfRule::MultinomialOnly);
}

GradientEstimate half_estimate(const Problem& problem, const Trace& sample, XbarChoice xbar) {
  return half_impl(problem, sample, xbar, HalfRule::Mixed);
}

GradientEstimate estimate(const EstimatorConfig& config, const Problem& problem, const Trace& sample,
                          const BaselineState* baselines) {
  switch (config.kind) {
    case EstimatorKind::LR: return lr_estimate(problem, sample, baselines, config.flags);
    case EstimatorKind::MuProp: return muprop_estimate(problem, sample, baselines, config.flags);
    case EstimatorKind::MuPropRollout: return muprop_rollout_estimate(problem, sample, baselines, config.flags);
    case EstimatorKind::ST: return st_estimate(problem, sample);
    case EstimatorKind::Half: return half_estimate(problem, sample, config.xbar);
  }
  throw Error("unknown estimator");
}

}  // namespace muprop
