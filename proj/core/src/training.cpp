#include "muprop/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>

#include "muprop/graph_io.hpp"
#include "muprop/rng.hpp"

namespace muprop {

using nlohmann::json;

namespace {

ImageSet head(const ImageSet& set, std::size_t n) {
  if (n == 0 || n >= set.count) return set;
  ImageSet out = set;
  out.count = n;
  out.pixels.resize(n * set.pixels_per_image());
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

bool all_finite(const GradMap& grads) {
  for (const auto& [id, g] : grads)
    if (!g.all_finite()) return false;
  return true;
}

/// Opens metrics.jsonl / metrics.csv (and timing.jsonl) and appends rows.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& dir, bool timing) {
    if (dir.empty()) return;
    jsonl_.open(dir / "metrics.jsonl");
    csv_.open(dir / "metrics.csv");
    if (!jsonl_ || !csv_) throw Error("cannot write metrics under " + dir.string());
    csv_ << "step,epoch,batch_cost,train_cost,eval_nll,signal_mean,signal_var,status\n";
    if (timing) timing_.open(dir / "timing.jsonl");
  }

  void write(const MetricsRow& r, double wall_ms) {
    if (!jsonl_.is_open()) return;
    jsonl_ << r.to_json().dump() << '\n';
    csv_ << r.step << ',' << r.epoch << ',' << (r.batch_cost ? format_double(*r.batch_cost) : "") << ','
         << format_double(r.train_cost) << ',' << format_double(r.eval_nll) << ',' << format_double(r.signal_mean)
         << ',' << format_double(r.signal_var) << ',' << r.status << '\n';
    jsonl_.flush();
    csv_.flush();
    if (timing_.is_open()) timing_ << json{{"step", r.step}, {"wall_ms", wall_ms}}.dump() << '\n';
  }

 private:
  std::ofstream jsonl_, csv_, timing_;
};

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  for (double lr : lr_sweep)
    if (!(lr > 0.0)) throw Error("every lr_sweep entry must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("momentum must lie in [0, 1)");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (eval_samples < 1) throw Error("eval_samples must be at least 1");
  if (log_every < 1) throw Error("log_every must be at least 1");
  if (dataset != "synthetic" && dataset != "mnist") throw Error("dataset must be 'synthetic' or 'mnist'");
  (void)LayerSpec::parse(arch);
}

json ExperimentConfig::to_json() const {
  return json{{"task", std::string(muprop::to_string(task))},
              {"arch", arch},
              {"estimator", std::string(muprop::to_string(estimator.kind))},
              {"flags", muprop::to_string(estimator.flags)},
              {"xbar", std::string(muprop::to_string(estimator.xbar))},
              {"learning_rate", learning_rate},
              {"lr_sweep", lr_sweep},
              {"momentum", momentum},
              {"batch_size", batch_size},
              {"epochs", epochs},
              {"steps", steps},
              {"seed", seed},
              {"dataset", dataset},
              {"data_dir", data_dir},
              {"out_dir", out_dir},
              {"eval_samples", eval_samples},
              {"binarization", std::string(muprop::to_string(binarization))},
              {"train_size", train_size},
              {"eval_size", eval_size},
              {"train_eval_size", train_eval_size},
              {"log_every", log_every},
              {"idb_hidden", idb_hidden},
              {"idb_learning_rate", idb_learning_rate},
              {"checkpoint", checkpoint},
              {"timing", timing}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j, ExperimentConfig c) {
  if (!j.is_object()) throw Error("config must be a JSON object");
  static const std::vector<std::string> known = {
      "task",     "arch",        "estimator",   "flags",           "xbar",       "learning_rate", "lr_sweep",
      "momentum", "batch_size",  "epochs",      "steps",           "seed",       "dataset",       "data_dir",
      "out_dir",  "eval_samples", "binarization", "train_size",    "eval_size",  "train_eval_size",
      "log_every", "idb_hidden", "idb_learning_rate", "checkpoint", "timing"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw Error("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("estimator")) c.estimator.kind = estimator_from_string(j.at("estimator").get<std::string>());
    if (j.contains("flags")) c.estimator.flags = flags_from_string(j.at("flags").get<std::string>());
    if (j.contains("xbar")) c.estimator.xbar = xbar_from_string(j.at("xbar").get<std::string>());
    if (j.contains("binarization")) c.binarization = binarization_from_string(j.at("binarization").get<std::string>());
    read_key(j, "arch", c.arch);
    read_key(j, "learning_rate", c.learning_rate);
    read_key(j, "lr_sweep", c.lr_sweep);
    read_key(j, "momentum", c.momentum);
    read_key(j, "batch_size", c.batch_size);
    read_key(j, "epochs", c.epochs);
    read_key(j, "steps", c.steps);
    read_key(j, "seed", c.seed);
    read_key(j, "dataset", c.dataset);
    read_key(j, "data_dir", c.data_dir);
    read_key(j, "out_dir", c.out_dir);
    read_key(j, "eval_samples", c.eval_samples);
    read_key(j, "train_size", c.train_size);
    read_key(j, "eval_size", c.eval_size);
    read_key(j, "train_eval_size", c.train_eval_size);
    read_key(j, "log_every", c.log_every);
    read_key(j, "idb_hidden", c.idb_hidden);
    read_key(j, "idb_learning_rate", c.idb_learning_rate);
    read_key(j, "checkpoint", c.checkpoint);
    read_key(j, "timing", c.timing);
  } catch (const json::exception& e) {
    throw Error(std::string("bad config value: ") + e.what());
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) { return from_json(j, ExperimentConfig{}); }

ExperimentConfig ExperimentConfig::extended(Task task) {
  ExperimentConfig c;
  c.task = task;
  c.dataset = "mnist";
  c.batch_size = 100;
  c.momentum = 0.9;
  c.eval_samples = 100;
  c.train_size = 0;
  c.eval_size = 0;
  c.train_eval_size = 1000;
  c.log_every = 600;
  if (task == Task::StructuredPrediction) {
    c.arch = "392-200-200-392";
    c.lr_sweep = {0.003, 0.001, 0.0003, 0.0001, 0.00003};
    c.epochs = 100;
  } else {
    c.arch = "200-784";
    c.lr_sweep = {0.003, 0.001, 0.0003, 0.0001, 0.00003, 0.00001, 0.000003};
    c.epochs = 200;
  }
  c.learning_rate = c.lr_sweep.front();
  return c;
}

void sgd_momentum_step(ValueMap& params, const GradMap& grads, ValueMap& velocity, double lr, double momentum) {
  for (const auto& [id, g] : grads) {
    auto it = params.find(id);
    if (it == params.end()) throw Error("gradient for unknown parameter " + std::to_string(id));
    Tensor& theta = it->second;
    if (theta.shape() != g.shape()) {
      throw Error("shape mismatch: parameter " + shape_string(theta.shape()) + " vs gradient " + shape_string(g.shape()));
    }
    Tensor& v = velocity.try_emplace(id, Tensor(theta.shape())).first->second;
    if (v.shape() != g.shape()) throw Error("shape mismatch: velocity " + shape_string(v.shape()));
    for (std::size_t i = 0; i < g.size(); ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      theta[i] += v[i];
    }
  }
}

json MetricsRow::to_json() const {
  return json{{"step", step},
              {"epoch", epoch},
              {"batch_cost", batch_cost ? finite_or_null(*batch_cost) : json(nullptr)},
              {"train_cost", finite_or_null(train_cost)},
              {"eval_nll", finite_or_null(eval_nll)},
              {"signal_mean", finite_or_null(signal_mean)},
              {"signal_var", finite_or_null(signal_var)},
              {"status", status}};
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("MUPROP_DATA_DIR"); env && *env) return env;
  return "data";
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  ExperimentData d;
  if (config.dataset == "synthetic") {
    if (config.train_size == 0 || config.eval_size == 0) throw Error("synthetic data needs nonzero set sizes");
    if (config.task == Task::StructuredPrediction) {
      d.train = synthetic_multimodal(config.train_size, derive_key(config.seed, 0x7A1));
      d.eval = synthetic_multimodal(config.eval_size, derive_key(config.seed, 0xE7A));
    } else {
      const LayerSpec spec = LayerSpec::parse(config.arch);
      const std::size_t visible = spec.layers.back().units;
      d.train = synthetic_sbn(config.train_size, derive_key(config.seed, 0x7A1), 10, visible);
      d.eval = synthetic_sbn(config.eval_size, derive_key(config.seed, 0xE7A), 10, visible);
    }
    return d;
  }
  const std::filesystem::path dir = config.data_dir.empty() ? default_data_dir() : std::filesystem::path(config.data_dir);
  const auto train = dir / "train-images-idx3-ubyte";
  const auto test = dir / "t10k-images-idx3-ubyte";
  for (const auto& p : {train, test}) {
    if (!std::filesystem::exists(p)) throw Error("dataset missing: " + p.string());
  }
  d.train = head(load_mnist_idx(train), config.train_size);
  d.eval = head(load_mnist_idx(test), config.eval_size);
  return d;
}

RunResult run_experiment(const ExperimentConfig& config, const ExperimentData& data,
                         const std::filesystem::path& out_dir) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const LayerSpec spec = LayerSpec::parse(config.arch);
  const Model model = build_model(config.task, spec, 1);
  const Model eval_model =
      config.task == Task::StructuredPrediction ? build_structured_predictor(spec, config.eval_samples) : model;
  const std::size_t eval_repeats = config.task == Task::Variational ? config.eval_samples : 1;

  const std::size_t expected_width = config.task == Task::StructuredPrediction
                                         ? spec.layers.front().width() + spec.layers.back().width()
                                         : spec.layers.back().width();
  if (data.train.pixels_per_image() != expected_width || data.eval.pixels_per_image() != expected_width) {
    throw Error("dimension mismatch: architecture " + config.arch + " expects " + std::to_string(expected_width) +
                " pixels per image, data has " + std::to_string(data.train.pixels_per_image()));
  }
  if (data.train.count == 0) throw Error("empty training set");

  RunResult result;
  result.out_dir = out_dir;
  result.params = init_params(model, derive_key(config.seed, 0x1A17));
  result.baselines = BaselineState::create(model.graph, {}, config.idb_hidden, derive_key(config.seed, 0x1DB));
  ValueMap velocity;

  const TaskData eval_data =
      binarize_and_split(data.eval, config.task, config.binarization, derive_key(config.seed, 0xE0A1));
  const TaskData probe_data = binarize_and_split(head(data.train, config.train_eval_size), config.task,
                                                 config.binarization, derive_key(config.seed, 0x7EA1));
  const std::uint64_t eval_seed = derive_key(config.seed, 0xE5A7);

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << config.to_json().dump(2) << '\n';
  }
  MetricsWriter writer(out_dir, config.timing);

  double interval_cost = 0.0, signal_sum = 0.0, signal_sq = 0.0;
  std::size_t interval_batches = 0, signal_count = 0;
  std::size_t step = 0, epoch = 0;

  auto emit = [&](std::string status) {
    MetricsRow row;
    row.step = step;
    row.epoch = epoch;
    row.status = std::move(status);
    if (interval_batches > 0) row.batch_cost = interval_cost / static_cast<double>(interval_batches);
    if (row.status == "diverged") {
      row.train_cost = row.eval_nll = std::numeric_limits<double>::infinity();
    } else {
      try {
        row.train_cost = evaluate_nll(model, result.params, probe_data, eval_seed, 1);
        row.eval_nll = evaluate_nll(eval_model, result.params, eval_data, eval_seed, eval_repeats);
      } catch (const NumericError&) {
        row.train_cost = row.eval_nll = std::numeric_limits<double>::infinity();
      }
      if (!std::isfinite(row.train_cost) || !std::isfinite(row.eval_nll)) row.status = "diverged";
    }
    if (signal_count > 0) {
      row.signal_mean = signal_sum / static_cast<double>(signal_count);
      row.signal_var = std::max(0.0, signal_sq / static_cast<double>(signal_count) - row.signal_mean * row.signal_mean);
    }
    interval_cost = signal_sum = signal_sq = 0.0;
    interval_batches = signal_count = 0;
    const double wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    writer.write(row, wall_ms);
    result.rows.push_back(row);
    return row.status == "ok";
  };

  bool healthy = emit("ok");
  const std::size_t n = data.train.count;
  const auto more = [&] { return config.steps > 0 ? step < config.steps : epoch < config.epochs; };
  TaskData train_data;
  bool have_threshold_copy = false;

  while (healthy && more()) {
    if (config.binarization == Binarization::Resample || !have_threshold_copy) {
      train_data = binarize_and_split(data.train, config.task, config.binarization,
                                      derive_key(config.seed, 0xB1A, epoch));
      have_threshold_copy = true;
    }
    const auto order = permutation(n, derive_key(config.seed, 0x0DE, epoch));
    for (std::size_t start = 0; start < n && healthy && (config.steps == 0 || step < config.steps);
         start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      GradMap grads;
      for (NodeId id : model.graph.parameters()) grads.emplace(id, Tensor(model.graph.node(id).shape));
      std::vector<GradientEstimate> batch;
      batch.reserve(end - start);
      double batch_cost = 0.0;
      bool ok = true;
      try {
        for (std::size_t j = start; j < end; ++j) {
          const ValueMap inputs = bind_inputs(model, train_data, order[j]);
          const Problem problem{model.graph, model.cost, inputs, result.params};
          const Trace trace = sample_trace(problem, derive_key(config.seed, step + 1, j - start));
          GradientEstimate e = estimate(config.estimator, problem, trace, &result.baselines);
          batch_cost += e.cost * inv;
          for (auto& [id, g] : grads) g += e.grads.at(id) * inv;
          if (e.has_learning_signals) {
            for (const NodeDiagnostics& d : e.nodes) {
              signal_sum += d.raw_signal;
              signal_sq += d.raw_signal * d.raw_signal;
              ++signal_count;
            }
          }
          e.grads.clear();
          batch.push_back(std::move(e));
        }
      } catch (const NumericError&) {
        ok = false;
      }
      ok = ok && std::isfinite(batch_cost) && all_finite(grads);
      ++step;
      if (!ok) {
        interval_cost += std::numeric_limits<double>::infinity();
        ++interval_batches;
        healthy = emit("diverged");
        break;
      }
      if (config.estimator.flags.any()) {
        update_baselines(result.baselines, batch, config.estimator.flags, config.idb_learning_rate);
      }
      sgd_momentum_step(result.params, grads, velocity, config.learning_rate, config.momentum);
      interval_cost += batch_cost;
      ++interval_batches;
      if (step % config.log_every == 0) healthy = emit("ok");
    }
    if (healthy) ++epoch;
  }
  if (healthy && result.rows.back().step != step) healthy = emit("ok");

  result.steps = step;
  result.diverged = !healthy;
  result.initial_train_cost = result.rows.front().train_cost;
  result.final_train_cost = result.rows.back().train_cost;
  result.final_eval_nll = result.rows.back().eval_nll;
  result.best_eval_nll = std::numeric_limits<double>::infinity();
  for (const MetricsRow& r : result.rows) {
    if (r.eval_nll < result.best_eval_nll) {
      result.best_eval_nll = r.eval_nll;
      result.best_step = r.step;
    }
  }
  if (!out_dir.empty() && config.checkpoint) {
    save_checkpoint(out_dir / "checkpoint", result.params, result.baselines, config.to_json());
  }
  return result;
}

RunResult run_experiment(const ExperimentConfig& config) {
  return run_experiment(config, load_experiment_data(config), config.out_dir);
}

double evaluate_eval_nll(const ExperimentConfig& config, const ExperimentData& data, const ValueMap& params) {
  const LayerSpec spec = LayerSpec::parse(config.arch);
  const bool structured = config.task == Task::StructuredPrediction;
  const Model eval_model =
      structured ? build_structured_predictor(spec, config.eval_samples) : build_sbn_variational(spec);
  const TaskData eval_data =
      binarize_and_split(data.eval, config.task, config.binarization, derive_key(config.seed, 0xE0A1));
  return evaluate_nll(eval_model, params, eval_data, derive_key(config.seed, 0xE5A7),
                      structured ? 1 : config.eval_samples);
}

std::size_t sweep_argmin(const std::vector<double>& learning_rates, const std::vector<double>& eval_nll) {
  if (learning_rates.size() != eval_nll.size()) throw Error("sweep_argmin: size mismatch");
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < eval_nll.size(); ++i) {
    if (!std::isfinite(eval_nll[i])) continue;
    if (!best || eval_nll[i] < eval_nll[*best] ||
        (eval_nll[i] == eval_nll[*best] && learning_rates[i] < learning_rates[*best])) {
      best = i;
    }
  }
  if (!best) throw Error("every run in the sweep diverged");
  return *best;
}

SweepResult run_sweep(const ExperimentConfig& config) {
  if (config.lr_sweep.empty()) throw Error("run_sweep needs a non-empty lr_sweep");
  const ExperimentData data = load_experiment_data(config);
  SweepResult sweep;
  std::vector<double> finals;
  json runs = json::array();
  for (double lr : config.lr_sweep) {
    ExperimentConfig c = config;
    c.learning_rate = lr;
    c.lr_sweep.clear();
    char name[64];
    std::snprintf(name, sizeof name, "lr_%g", lr);
    const std::filesystem::path dir = std::filesystem::path(config.out_dir) / name;
    RunResult r = run_experiment(c, data, dir);
    finals.push_back(r.diverged ? std::numeric_limits<double>::infinity() : r.final_eval_nll);
    runs.push_back(json{{"learning_rate", lr},
                        {"dir", name},
                        {"final_eval_nll", finite_or_null(r.final_eval_nll)},
                        {"best_eval_nll", finite_or_null(r.best_eval_nll)},
                        {"best_step", r.best_step},
                        {"diverged", r.diverged}});
    sweep.learning_rates.push_back(lr);
    sweep.runs.push_back(std::move(r));
  }
  json summary{{"runs", runs}};
  try {
    sweep.best = sweep_argmin(sweep.learning_rates, finals);
    summary["selected_learning_rate"] = sweep.learning_rates[sweep.best];
    summary["selected_final_eval_nll"] = finals[sweep.best];
  } catch (const Error&) {
    summary["selected_learning_rate"] = nullptr;
    std::filesystem::create_directories(config.out_dir);
    std::ofstream(std::filesystem::path(config.out_dir) / "summary.json") << summary.dump(2) << '\n';
    throw;
  }
  std::ofstream(std::filesystem::path(config.out_dir) / "summary.json") << summary.dump(2) << '\n';
  return sweep;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void append_tensor(json& manifest, std::vector<double>& blob, const std::string& key, NodeId id, const Tensor& t) {
  json entry{{"key", key}, {"shape", t.shape()}, {"offset", blob.size()}, {"count", t.size()}};
  if (id >= 0) entry["id"] = id;
  manifest["tensors"].push_back(entry);
  blob.insert(blob.end(), t.data().begin(), t.data().end());
}

Tensor take_tensor(const json& entry, const std::vector<double>& blob) {
  const std::size_t offset = entry.at("offset").get<std::size_t>();
  const std::size_t count = entry.at("count").get<std::size_t>();
  const Shape shape = entry.at("shape").get<Shape>();
  if (count != numel(shape) || offset + count > blob.size()) throw Error("checkpoint tensor out of range");
  return Tensor(shape, std::vector<double>(blob.begin() + static_cast<std::ptrdiff_t>(offset),
                                           blob.begin() + static_cast<std::ptrdiff_t>(offset + count)));
}

std::filesystem::path with_suffix(std::filesystem::path stem, const char* ext) {
  stem += ext;
  return stem;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const ValueMap& params, const BaselineState& baselines,
                     const json& config) {
  static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");
  json manifest{{"format", "muprop-checkpoint-1"}, {"byte_order", "little"}, {"config", config}};
  manifest["tensors"] = json::array();
  std::vector<double> blob;
  for (const auto& [id, t] : params) append_tensor(manifest, blob, "param", id, t);
  append_tensor(manifest, blob, "idb.w1", -1, baselines.idb.w1);
  append_tensor(manifest, blob, "idb.b1", -1, baselines.idb.b1);
  append_tensor(manifest, blob, "idb.w2", -1, baselines.idb.w2);
  append_tensor(manifest, blob, "idb.b2", -1, baselines.idb.b2);
  manifest["baselines"] = json{{"decay", baselines.decay},
                               {"nodes", baselines.nodes},
                               {"moving_mean", baselines.moving_mean},
                               {"moving_var", baselines.moving_var},
                               {"observations", baselines.observations},
                               {"idb_hidden", baselines.idb_hidden},
                               {"idb_inputs", baselines.idb_inputs}};

  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  bin.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size() * sizeof(double)));
  std::ofstream(with_suffix(stem, ".json")) << manifest.dump(2) << '\n';
  if (!bin) throw Error("cannot write checkpoint " + stem.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream mf(with_suffix(stem, ".json"));
  if (!mf) throw Error("cannot open checkpoint manifest " + with_suffix(stem, ".json").string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw Error(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "muprop-checkpoint-1") throw Error("unknown checkpoint format");

  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary | std::ios::ate);
  if (!bin) throw Error("cannot open checkpoint blob " + with_suffix(stem, ".bin").string());
  const auto bytes = static_cast<std::size_t>(bin.tellg());
  if (bytes % sizeof(double) != 0) throw Error("checkpoint blob has a partial value");
  std::vector<double> blob(bytes / sizeof(double));
  bin.seekg(0);
  bin.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(bytes));

  Checkpoint ck;
  ck.config = manifest.at("config");
  for (const json& entry : manifest.at("tensors")) {
    const std::string key = entry.at("key").get<std::string>();
    Tensor t = take_tensor(entry, blob);
    if (key == "param") {
      ck.params.emplace(entry.at("id").get<NodeId>(), std::move(t));
    } else if (key == "idb.w1") {
      ck.baselines.idb.w1 = std::move(t);
    } else if (key == "idb.b1") {
      ck.baselines.idb.b1 = std::move(t);
    } else if (key == "idb.w2") {
      ck.baselines.idb.w2 = std::move(t);
    } else if (key == "idb.b2") {
      ck.baselines.idb.b2 = std::move(t);
    } else {
      throw Error("unknown checkpoint tensor '" + key + "'");
    }
  }
  const json& b = manifest.at("baselines");
  ck.baselines.decay = b.at("decay").get<double>();
  ck.baselines.nodes = b.at("nodes").get<std::vector<NodeId>>();
  ck.baselines.moving_mean = b.at("moving_mean").get<std::vector<double>>();
  ck.baselines.moving_var = b.at("moving_var").get<std::vector<double>>();
  ck.baselines.observations = b.at("observations").get<std::size_t>();
  ck.baselines.idb_hidden = b.at("idb_hidden").get<std::size_t>();
  ck.baselines.idb_inputs = b.at("idb_inputs").get<std::vector<NodeId>>();
  return ck;
}

}  // namespace muprop
