#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "muprop/graph.hpp"

namespace muprop {

/// Layer widths for both experiment families, written like "392-200-200-392",
/// "200x10-784" (categorical, 10 categories per unit) or "8-16d-4-8" (deterministic
/// layer using the hidden nonlinearity).
struct LayerSpec {
  struct Layer {
    std::size_t units = 0;
    Dist dist = Dist::Bernoulli;
    std::size_t categories = 2;  // categorical only
    bool deterministic = false;

    /// Flattened width of the layer's value.
    std::size_t width() const { return dist == Dist::Categorical && !deterministic ? units * categories : units; }
  };

  std::vector<Layer> layers;
  Op nonlinearity = Op::Tanh;

  static LayerSpec parse(std::string_view text);
  std::string to_string() const;
  std::size_t stochastic_layer_count() const;
};

enum class Task { StructuredPrediction, Variational };

std::string_view to_string(Task t);
Task task_from_string(std::string_view s);

/// A built experiment graph. Parameter ids depend only on the task and the layer spec,
/// so parameters trained on one sample count can be evaluated on another.
struct Model {
  Task task = Task::StructuredPrediction;
  LayerSpec spec;
  std::size_t samples = 1;
  Graph graph;
  NodeId cost = -1;
  NodeId x = -1;  // conditioning input (top half) or observation
  NodeId y = -1;  // structured prediction target, -1 otherwise
  /// Variational task: parameters of p(x, h) and of q(h | x).
  std::vector<NodeId> generative_params;
  std::vector<NodeId> inference_params;

  std::size_t input_size() const { return graph.node(x).shape.at(0); }
  std::size_t target_size() const { return y < 0 ? 0 : graph.node(y).shape.at(0); }
};

/// First layer is the input, last the Bernoulli-observed output, everything between is
/// hidden. Builds m independent hidden traces sharing parameters, with cost
/// -log((1/m) sum_i p(y | h_i)).
Model build_structured_predictor(const LayerSpec& spec, std::size_t m);

/// Layers list latent layers top-down followed by the observation width. q(h | x) runs
/// bottom-up and owns the stochastic nodes; the cost is the negative single-sample bound
/// -[log p(x, h) - log q(h | x)].
Model build_sbn_variational(const LayerSpec& spec);

Model build_model(Task task, const LayerSpec& spec, std::size_t m);

/// Weights uniform in +-1/sqrt(fan-in), biases and prior logits zero.
ValueMap init_params(const Model& model, std::uint64_t seed);

/// Examples for either task. `y` is empty for the variational task.
struct TaskData {
  std::vector<Tensor> x;
  std::vector<Tensor> y;

  std::size_t size() const { return x.size(); }
};

ValueMap bind_inputs(const Model& model, const TaskData& data, std::size_t index);

/// Mean over the dataset of the model's cost on one stochastic trace per example. For
/// the structured predictor this is the m-sample NLL; for the variational model it is
/// the mean of `m` single-sample negative bounds per example.
double evaluate_nll(const Model& model, const ValueMap& params, const TaskData& data, std::uint64_t seed,
                    std::size_t m = 1);

}  // namespace muprop
