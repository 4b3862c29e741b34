#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "muprop/graph.hpp"

namespace muprop {

enum class EstimatorKind { LR, MuProp, MuPropRollout, ST, Half };

std::string_view to_string(EstimatorKind k);
EstimatorKind estimator_from_string(std::string_view s);

/// Variance-reduction devices for the likelihood-ratio family:
/// centering (C), variance normalization (VN), input-dependent baseline (IDB).
struct BaselineFlags {
  bool center = false;
  bool variance_norm = false;
  bool idb = false;

  bool any() const { return center || variance_norm || idb; }
  friend bool operator==(const BaselineFlags&, const BaselineFlags&) = default;
};

/// Parses "c,vn,idb" (any subset, any order; "" or "none" for no flags).
BaselineFlags flags_from_string(std::string_view s);
std::string to_string(BaselineFlags f);

/// Fixed point for the multinomial 1/2 estimator.
enum class XbarChoice { Half, InverseK, Mean };

std::string_view to_string(XbarChoice x);
XbarChoice xbar_from_string(std::string_view s);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::MuProp;
  BaselineFlags flags;
  XbarChoice xbar = XbarChoice::InverseK;
};

/// Human-readable label, e.g. "muprop-c-vn" or "st".
std::string label(const EstimatorConfig& config);

/// One-hidden-layer tanh regressor x0 -> one baseline value per stochastic node.
struct IdbNetwork {
  Tensor w1;  // [hidden, in]
  Tensor b1;  // [hidden]
  Tensor w2;  // [out, hidden]
  Tensor b2;  // [out]

  std::size_t input_size() const { return w1.shape().at(1); }
  std::size_t hidden_size() const { return w1.shape().at(0); }
  std::size_t output_size() const { return w2.shape().at(0); }

  std::vector<double> predict(std::span<const double> x) const;

  /// Gradient of 0.5 * sum_j (target_j - B_j(x))^2 w.r.t. every parameter, accumulated
  /// into `grad` (same layout as this network) with weight `scale`.
  void accumulate_gradient(std::span<const double> x, std::span<const double> targets, double scale,
                           IdbNetwork& grad) const;
};

/// Moving statistics and IDB network for the likelihood-ratio learning signals.
/// Indexed by position of the stochastic node in Graph::stochastic_nodes().
struct BaselineState {
  double decay = 0.9;
  std::vector<NodeId> nodes;
  std::vector<double> moving_mean;
  std::vector<double> moving_var;
  std::size_t observations = 0;

  std::size_t idb_hidden = 0;
  std::vector<NodeId> idb_inputs;
  IdbNetwork idb;

  /// b = 0, v = 0; IDB first layer uniform in +-1/sqrt(fan-in), output layer zero.
  static BaselineState create(const Graph& graph, std::vector<NodeId> idb_inputs = {}, std::size_t idb_hidden = 100,
                              std::uint64_t seed = 0, double decay = 0.9);

  std::size_t index_of(NodeId node) const;
};

/// Concatenated values of the IDB input nodes on a trace.
std::vector<double> idb_features(const BaselineState& state, const Trace& trace);

/// (signal - b*[C] - B(x0)*[IDB]) / (VN ? max(1, sqrt(v)) : 1). Reads state only.
double adjust_signal(const BaselineState& state, std::size_t index, double signal, BaselineFlags flags,
                     double idb_prediction);

/// Adjusts one signal and then folds it into the moving statistics.
double apply_baselines(double signal, NodeId node, BaselineState& state, BaselineFlags flags,
                       std::span<const double> input_sample);

/// One SGD step on psi minimizing sum_j (centered_j - B_j(x0))^2 where centered_j = signal_j - b_j.
void idb_update(BaselineState& state, std::span<const double> input_sample, std::span<const double> centered_signal,
                double learning_rate);

struct NodeDiagnostics {
  NodeId node = -1;
  /// Learning signal before any baseline (cost for LR, Taylor residual for MuProp).
  double raw_signal = 0.0;
  double baseline = 0.0;        // b*[C] + B(x0)*[IDB]
  double idb_prediction = 0.0;  // B(x0), 0 unless IDB
  double adjusted_signal = 0.0;
  bool clamped = false;         // 1/2 estimator: p(x) hit the 1e-12 floor
};

struct GradientEstimate {
  GradMap grads;
  double cost = 0.0;
  std::vector<NodeDiagnostics> nodes;
  std::vector<double> idb_input;
  /// True for the LR family, whose diagnostics carry learning signals for the baselines.
  bool has_learning_signals = false;
  int mean_field_passes = 0;
  int stochastic_passes = 0;
};

/// The graph, cost node and bound values an estimator differentiates.
struct Problem {
  const Graph& graph;
  NodeId cost;
  const ValueMap& inputs;
  const ValueMap& params;
};

Trace sample_trace(const Problem& problem, std::uint64_t seed);

/// Score-function estimator: sum_i score_i * signal_i plus pathwise cost gradients.
GradientEstimate lr_estimate(const Problem& problem, const Trace& sample, const BaselineState* baselines = nullptr,
                             BaselineFlags flags = {});

/// Mean-field-anchored Taylor control variate (single mean-field trunk).
GradientEstimate muprop_estimate(const Problem& problem, const Trace& sample, const BaselineState* baselines = nullptr,
                                 BaselineFlags flags = {});
GradientEstimate muprop_estimate(const Problem& problem, std::uint64_t seed, const BaselineState* baselines = nullptr,
                                 BaselineFlags flags = {});

/// MuProp whose anchors for layer d come from a mean-field branch started at the
/// sampled values of all shallower stochastic layers.
GradientEstimate muprop_rollout_estimate(const Problem& problem, const Trace& sample,
                                         const BaselineState* baselines = nullptr, BaselineFlags flags = {});

/// Straight-through: backpropagate through samples via the mean-function Jacobian.
GradientEstimate st_estimate(const Problem& problem, const Trace& sample);

/// 1/2 estimator for Bernoulli units: f'(x) dmu / (2 p(x)) per unit.
GradientEstimate half_estimate_binary(const Problem& problem, const Trace& sample);

/// 1/2 estimator for categorical units: (f'(x)^T (x - xbar)) (x^T dmu) / p(x) per unit.
GradientEstimate half_estimate_multinomial(const Problem& problem, const Trace& sample,
                                           XbarChoice xbar = XbarChoice::InverseK);

/// 1/2 estimator on mixed graphs: binary rule on Bernoulli nodes, multinomial rule elsewhere.
GradientEstimate half_estimate(const Problem& problem, const Trace& sample, XbarChoice xbar = XbarChoice::InverseK);

GradientEstimate estimate(const EstimatorConfig& config, const Problem& problem, const Trace& sample,
                          const BaselineState* baselines = nullptr);

/// Folds a batch of estimates into the baseline state: moving mean/variance from the
/// batch averages, then one IDB step on the batch-mean loss. Order-independent.
void update_baselines(BaselineState& state, std::span<const GradientEstimate> batch, BaselineFlags flags,
                      double idb_learning_rate);

/// Stochastic depth of each stochastic node (1 for nodes with no stochastic ancestor).
std::vector<int> stochastic_layers(const Graph& graph);

}  // namespace muprop
