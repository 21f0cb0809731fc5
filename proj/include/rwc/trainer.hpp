#pragma once

// Desk-scale trainer: a ReLU multilayer perceptron fitted to Gaussian blobs
// with softmax cross-entropy and SGD with momentum and weight decay. A run
// writes one snapshot per epoch (plus the initial weights) and a manifest,
// and is a deterministic function of its config.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "rwc/error.hpp"
#include "rwc/random.hpp"
#include "rwc/snapshot.hpp"
#include "rwc/util.hpp"

namespace rwc {

struct DatasetConfig {
  int classes = 2;        // k
  int per_class = 256;    // n
  int dims = 2;           // d
  double separation = 2;  // r: class c is centred at r * e_{c mod d}
  double noise = 1;       // sigma, per coordinate

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct TrainerConfig {
  std::uint64_t seed = 0;
  int epochs = 60;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> layer_widths = {2, 32, 32, 2};
  DatasetConfig dataset;

  friend bool operator==(const TrainerConfig&, const TrainerConfig&) = default;
};

inline void validate(const TrainerConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (c.epochs < 1) fail("epochs must be >= 1, got " + std::to_string(c.epochs));
  if (c.batch_size < 1) fail("batch_size must be >= 1, got " + std::to_string(c.batch_size));
  if (!(c.lr > 0) || !std::isfinite(c.lr)) fail("lr must be a positive finite number");
  if (!(c.momentum >= 0 && c.momentum < 1)) fail("momentum must be in [0, 1)");
  if (!(c.weight_decay >= 0) || !std::isfinite(c.weight_decay)) fail("weight_decay must be >= 0");
  if (c.dataset.classes < 2) fail("dataset.classes must be >= 2");
  if (c.dataset.per_class < 1) fail("dataset.per_class must be >= 1");
  if (c.dataset.dims < 1) fail("dataset.dims must be >= 1");
  if (!(c.dataset.separation > 0) || !std::isfinite(c.dataset.separation)) fail("dataset.separation must be > 0");
  if (!(c.dataset.noise > 0) || !std::isfinite(c.dataset.noise)) fail("dataset.noise must be > 0");
  if (c.layer_widths.size() < 3) fail("layer_widths needs input, at least one hidden width, and classes");
  for (int w : c.layer_widths) {
    if (w < 1) fail("layer_widths entries must be >= 1");
  }
  if (c.layer_widths.front() != c.dataset.dims) fail("layer_widths must start with dataset.dims");
  if (c.layer_widths.back() != c.dataset.classes) fail("layer_widths must end with dataset.classes");
}

/// Row-major dense matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

struct Dataset {
  Matrix features;  // samples x dims
  std::vector<int> labels;
};

/// Class-major Gaussian blobs, then shuffled by the same generator.
inline Dataset make_blobs(const DatasetConfig& config, std::uint64_t seed) {
  SplitMix64 rng(seed, /*stream=*/1);
  const auto k = static_cast<std::size_t>(config.classes);
  const auto n = static_cast<std::size_t>(config.per_class);
  const auto d = static_cast<std::size_t>(config.dims);
  Dataset ordered{Matrix(k * n, d), std::vector<int>(k * n)};
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t row = c * n + i;
      ordered.labels[row] = static_cast<int>(c);
      for (std::size_t j = 0; j < d; ++j) {
        const double centre = j == c % d ? config.separation : 0.0;
        ordered.features(row, j) = rng.normal(centre, config.noise);
      }
    }
  }
  std::vector<std::size_t> order(k * n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(std::span<std::size_t>(order));

  Dataset out{Matrix(k * n, d), std::vector<int>(k * n)};
  for (std::size_t i = 0; i < order.size(); ++i) {
    out.labels[i] = ordered.labels[order[i]];
    std::copy_n(ordered.features.row(order[i]).begin(), d, out.features.data.begin() + i * d);
  }
  return out;
}

struct DenseLayer {
  Matrix weight;  // out x in
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

struct ModelState {
  std::vector<DenseLayer> layers;

  /// All-zero parameters for the given widths.
  static ModelState zeros(const std::vector<int>& widths) {
    ModelState m;
    for (std::size_t l = 1; l < widths.size(); ++l) {
      const auto in = static_cast<std::size_t>(widths[l - 1]);
      const auto out = static_cast<std::size_t>(widths[l]);
      m.layers.push_back({Matrix(out, in), std::vector<double>(out, 0.0)});
    }
    return m;
  }

  /// He-normal weights (std sqrt(2 / fan_in)), zero biases.
  static ModelState he_normal(const std::vector<int>& widths, SplitMix64& rng) {
    ModelState m = zeros(widths);
    for (auto& layer : m.layers) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(layer.weight.cols));
      for (auto& w : layer.weight.data) w = rng.normal(0.0, stddev);
    }
    return m;
  }

  std::size_t input_dim() const { return layers.front().weight.cols; }
  std::size_t output_dim() const { return layers.back().weight.rows; }

  bool all_finite() const {
    for (const auto& layer : layers) {
      for (double w : layer.weight.data) {
        if (!std::isfinite(w)) return false;
      }
      for (double b : layer.bias) {
        if (!std::isfinite(b)) return false;
      }
    }
    return true;
  }

  friend bool operator==(const ModelState&, const ModelState&) = default;
};

/// Gradients and optimizer velocities share the model's layout.
using Gradients = ModelState;

struct OptimizerState {
  ModelState velocity;

  static OptimizerState for_model(const ModelState& model) {
    OptimizerState s;
    for (const auto& layer : model.layers) {
      s.velocity.layers.push_back(
          {Matrix(layer.weight.rows, layer.weight.cols), std::vector<double>(layer.bias.size(), 0.0)});
    }
    return s;
  }
};

namespace detail {

// out = in * W^T + b, optionally rectified.
inline Matrix affine(const Matrix& in, const DenseLayer& layer, bool relu) {
  const auto& W = layer.weight;
  Matrix out(in.rows, W.rows);
  for (std::size_t r = 0; r < in.rows; ++r) {
    for (std::size_t o = 0; o < W.rows; ++o) {
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < W.cols; ++i) acc += in(r, i) * W(o, i);
      out(r, o) = relu ? std::max(acc, 0.0) : acc;
    }
  }
  return out;
}

inline void check_batch(const ModelState& model, const Matrix& batch) {
  if (model.layers.empty()) throw Error(ErrorCode::ShapeMismatch, "model has no layers");
  if (batch.cols != model.input_dim()) {
    throw Error(ErrorCode::ShapeMismatch, "batch width " + std::to_string(batch.cols) + " != input dim " +
                                              std::to_string(model.input_dim()));
  }
}

}  // namespace detail

/// Logits for each row of `batch`. Hidden layers are rectified; the last
/// layer is linear.
inline Matrix forward(const ModelState& model, const Matrix& batch) {
  detail::check_batch(model, batch);
  Matrix a = batch;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    a = detail::affine(a, model.layers[l], l + 1 < model.layers.size());
  }
  return a;
}

struct LossAndGrads {
  double loss = 0.0;
  Gradients grads;
};

/// Mean softmax cross-entropy over the batch and its exact gradient.
inline LossAndGrads loss_and_grads(const ModelState& model, const Matrix& batch, std::span<const int> labels) {
  detail::check_batch(model, batch);
  if (batch.rows == 0) throw Error(ErrorCode::ShapeMismatch, "empty batch");
  if (labels.size() != batch.rows) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(labels.size()) + " labels for " +
                                              std::to_string(batch.rows) + " rows");
  }
  const auto classes = model.output_dim();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(y) + " outside [0, " +
                                                  std::to_string(classes) + ")");
    }
  }

  // activations[l] is the input to layer l; activations.back() the logits.
  std::vector<Matrix> activations{batch};
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    activations.push_back(detail::affine(activations.back(), model.layers[l], l + 1 < model.layers.size()));
  }
  const Matrix& logits = activations.back();
  const double inv_batch = 1.0 / static_cast<double>(batch.rows);

  LossAndGrads out;
  out.grads = ModelState::zeros([&] {
    std::vector<int> widths{static_cast<int>(model.input_dim())};
    for (const auto& layer : model.layers) widths.push_back(static_cast<int>(layer.weight.rows));
    return widths;
  }());

  Matrix delta(batch.rows, classes);
  double total = 0.0;
  for (std::size_t r = 0; r < batch.rows; ++r) {
    const auto row = logits.row(r);
    const auto top = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    const double peak = row[top];
    // log-sum-exp with the peak term (exactly 1) pulled out.
    double rest = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (c != top) rest += std::exp(row[c] - peak);
    }
    const double lse = std::log1p(rest);
    const auto y = static_cast<std::size_t>(labels[r]);
    total += lse - (row[y] - peak);
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(row[c] - peak - lse);
      delta(r, c) = (p - (c == y ? 1.0 : 0.0)) * inv_batch;
    }
  }
  out.loss = total * inv_batch;

  for (std::size_t l = model.layers.size(); l-- > 0;) {
    const Matrix& input = activations[l];
    const auto& W = model.layers[l].weight;
    auto& gW = out.grads.layers[l].weight;
    auto& gb = out.grads.layers[l].bias;
    for (std::size_t r = 0; r < batch.rows; ++r) {
      for (std::size_t o = 0; o < W.rows; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        gb[o] += d;
        for (std::size_t i = 0; i < W.cols; ++i) gW(o, i) += d * input(r, i);
      }
    }
    if (l == 0) break;
    Matrix prev(batch.rows, W.cols);
    for (std::size_t r = 0; r < batch.rows; ++r) {
      for (std::size_t i = 0; i < W.cols; ++i) {
        if (input(r, i) <= 0.0) continue;  // rectified unit: zero gradient
        double acc = 0.0;
        for (std::size_t o = 0; o < W.rows; ++o) acc += delta(r, o) * W(o, i);
        prev(r, i) = acc;
      }
    }
    delta = std::move(prev);
  }
  return out;
}

struct SgdHyperparameters {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// g' = g + weight_decay * w (weights only); v = momentum * v + g'; w -= lr * v.
inline void sgd_step(ModelState& model, OptimizerState& optimizer, const Gradients& grads,
                     const SgdHyperparameters& hp) {
  if (grads.layers.size() != model.layers.size() || optimizer.velocity.layers.size() != model.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "gradient/optimizer layer count differs from model");
  }
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    auto& vel = optimizer.velocity.layers[l];
    const auto& g = grads.layers[l];
    if (g.weight.data.size() != layer.weight.data.size() || g.bias.size() != layer.bias.size() ||
        vel.weight.data.size() != layer.weight.data.size() || vel.bias.size() != layer.bias.size()) {
      throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l + 1) + " shapes differ");
    }
    for (std::size_t i = 0; i < layer.weight.data.size(); ++i) {
      const double step = g.weight.data[i] + hp.weight_decay * layer.weight.data[i];
      vel.weight.data[i] = hp.momentum * vel.weight.data[i] + step;
      layer.weight.data[i] -= hp.lr * vel.weight.data[i];
    }
    for (std::size_t i = 0; i < layer.bias.size(); ++i) {
      vel.bias[i] = hp.momentum * vel.bias[i] + g.bias[i];
      layer.bias[i] -= hp.lr * vel.bias[i];
    }
  }
}

/// fc1.weight, fc1.bias, fc2.weight, ... in layer order.
inline TensorSnapshot to_snapshot(const ModelState& model) {
  TensorSnapshot snap;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    const std::string prefix = "fc" + std::to_string(l + 1);
    snap.add(prefix + ".weight", TensorData(Dtype::F64, {layer.weight.rows, layer.weight.cols}, layer.weight.data));
    snap.add(prefix + ".bias", TensorData(Dtype::F64, {layer.bias.size()}, layer.bias));
  }
  return snap;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

inline Evaluation evaluate(const ModelState& model, const Dataset& data) {
  Evaluation e;
  e.loss = loss_and_grads(model, data.features, data.labels).loss;
  const Matrix logits = forward(model, data.features);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows; ++r) {
    const auto row = logits.row(r);
    const auto predicted = std::max_element(row.begin(), row.end()) - row.begin();
    correct += predicted == data.labels[r] ? 1 : 0;
  }
  e.accuracy = static_cast<double>(correct) / static_cast<double>(logits.rows);
  return e;
}

inline std::string architecture_name(const std::vector<int>& widths) {
  std::string out = "mlp";
  for (std::size_t i = 0; i < widths.size(); ++i) out += (i == 0 ? "-" : "x") + std::to_string(widths[i]);
  return out;
}

struct TrainResult {
  RunManifest manifest;
  Evaluation final_epoch;  // on the full training set
};

/// Trains and writes epoch_0.lws ... epoch_N.lws plus manifest.json into
/// `output_directory`. Each snapshot's metadata records the epoch and the
/// full-training-set loss and accuracy at that point.
inline TrainResult train(const TrainerConfig& config, const std::filesystem::path& output_directory) {
  validate(config);
  std::error_code ec;
  std::filesystem::create_directories(output_directory, ec);
  if (ec) {
    throw Error(ErrorCode::IoFailure, "cannot create output directory '" + output_directory.string() + "': " +
                                          ec.message());
  }

  RunManifest manifest;
  manifest.run_id = "seed-" + std::to_string(config.seed);
  manifest.seed = config.seed;
  manifest.epochs = config.epochs;
  manifest.includes_initial = true;
  manifest.checkpoint_pattern = "epoch_{epoch}.lws";
  manifest.architecture = architecture_name(config.layer_widths);
  manifest.hyperparameters = {config.lr, config.momentum, config.weight_decay};

  const Dataset data = make_blobs(config.dataset, config.seed);
  SplitMix64 init_rng(config.seed, /*stream=*/2);
  SplitMix64 batch_rng(config.seed, /*stream=*/3);
  ModelState model = ModelState::he_normal(config.layer_widths, init_rng);
  OptimizerState optimizer = OptimizerState::for_model(model);
  const SgdHyperparameters hp{config.lr, config.momentum, config.weight_decay};

  std::vector<std::filesystem::path> written;
  auto discard_written = [&] {
    for (const auto& p : written) std::filesystem::remove(p, ec);
    std::filesystem::remove(output_directory / RunManifest::kFileName, ec);
  };

  Evaluation eval;
  auto save = [&](int epoch) {
    if (!model.all_finite()) {
      discard_written();
      throw Error(ErrorCode::DivergenceDetected, "non-finite parameter after epoch " + std::to_string(epoch));
    }
    eval = evaluate(model, data);
    TensorSnapshot snap = to_snapshot(model);
    snap.metadata["epoch"] = std::to_string(epoch);
    snap.metadata["train_loss"] = format_g17(eval.loss);
    snap.metadata["train_accuracy"] = format_g17(eval.accuracy);
    const auto path = output_directory / manifest.checkpoint_name(epoch);
    written.push_back(path);
    write_snapshot_file(snap, path);
  };

  save(0);
  const std::size_t samples = data.labels.size();
  const auto batch_size = static_cast<std::size_t>(config.batch_size);
  const std::size_t dims = data.features.cols;
  std::vector<std::size_t> order(samples);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    batch_rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t start = 0; start < samples; start += batch_size) {
      const std::size_t rows = std::min(batch_size, samples - start);
      Matrix batch(rows, dims);
      std::vector<int> labels(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto src = order[start + r];
        std::copy_n(data.features.row(src).begin(), dims, batch.data.begin() + r * dims);
        labels[r] = data.labels[src];
      }
      const auto step = loss_and_grads(model, batch, labels);
      sgd_step(model, optimizer, step.grads, hp);
    }
    save(epoch);
  }

  const auto manifest_path = output_directory / RunManifest::kFileName;
  std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
  out << write_manifest(manifest);
  out.close();
  if (!out) throw Error(ErrorCode::IoFailure, "failed writing '" + manifest_path.string() + "'");
  return {manifest, eval};
}

/// Trainer config document: a JSON object with any subset of the
/// TrainerConfig fields; absent fields keep their defaults, unknown fields
/// are rejected.
inline TrainerConfig parse_trainer_config(std::string_view text) {
  using json = nlohmann::json;
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::InvalidConfig, "trainer config must be a JSON object");

  TrainerConfig c;
  auto get_int = [](const json& j, const std::string& key, auto& target) {
    if (!j.is_number_integer()) throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be an integer");
    target = j.get<std::remove_reference_t<decltype(target)>>();
  };
  auto get_real = [](const json& j, const std::string& key, double& target) {
    if (!j.is_number()) throw Error(ErrorCode::InvalidConfig, "'" + key + "' must be a number");
    target = j.get<double>();
  };
  for (const auto& [key, value] : doc.items()) {
    if (key == "seed") {
      if (!value.is_number_unsigned()) throw Error(ErrorCode::InvalidConfig, "'seed' must be a non-negative integer");
      c.seed = value.get<std::uint64_t>();
    } else if (key == "epochs") {
      get_int(value, key, c.epochs);
    } else if (key == "batch_size") {
      get_int(value, key, c.batch_size);
    } else if (key == "lr") {
      get_real(value, key, c.lr);
    } else if (key == "momentum") {
      get_real(value, key, c.momentum);
    } else if (key == "weight_decay") {
      get_real(value, key, c.weight_decay);
    } else if (key == "layer_widths") {
      if (!value.is_array()) throw Error(ErrorCode::InvalidConfig, "'layer_widths' must be a list");
      c.layer_widths.clear();
      for (const auto& w : value) {
        int width = 0;
        get_int(w, "layer_widths", width);
        c.layer_widths.push_back(width);
      }
    } else if (key == "dataset") {
      if (!value.is_object()) throw Error(ErrorCode::InvalidConfig, "'dataset' must be an object");
      for (const auto& [dkey, dvalue] : value.items()) {
        const std::string full = "dataset." + dkey;
        if (dkey == "classes") {
          get_int(dvalue, full, c.dataset.classes);
        } else if (dkey == "per_class") {
          get_int(dvalue, full, c.dataset.per_class);
        } else if (dkey == "dims") {
          get_int(dvalue, full, c.dataset.dims);
        } else if (dkey == "separation") {
          get_real(dvalue, full, c.dataset.separation);
        } else if (dkey == "noise") {
          get_real(dvalue, full, c.dataset.noise);
        } else {
          throw Error(ErrorCode::InvalidConfig, "unknown field '" + full + "'");
        }
      }
    } else {
      throw Error(ErrorCode::InvalidConfig, "unknown field '" + key + "'");
    }
  }
  validate(c);
  return c;
}

}  // namespace rwc
