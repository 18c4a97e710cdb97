#pragma once

// Convolutional pose-regression network built from a hyperparameter vector:
//
//   [Conv3x3(filters) (+BatchNorm) + Act + MaxPool2x2] x n_conv
//   Flatten
//   [Dropout + Dense(units) + Act] x n_dense
//   Dropout + LinearOutput(n_out)

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tactipose/dataset.hpp"
#include "tactipose/nn/checkpoint.hpp"
#include "tactipose/nn/train.hpp"

namespace tactipose {

struct Hyperparams {
  int n_conv = 3;
  int n_filters = 16;
  int n_dense = 1;
  int n_units = 64;
  nn::Activation activation = nn::Activation::relu;
  double dropout = 0.0;
  double l1 = 1e-4;
  double l2 = 1e-4;
  int batch_size = 16;
  bool batchnorm = false;

  /// Reference optimum for the flat-surface task (batch normalisation off).
  static Hyperparams surface_optimum() { return {5, 512, 1, 16, nn::Activation::relu, 0.001, 0.001, 0.064, 32, false}; }
  /// Reference optimum for the straight-edge task.
  static Hyperparams edge_optimum() { return {5, 256, 2, 512, nn::Activation::relu, 0.203, 0.0001, 0.0003, 16, false}; }

  friend bool operator==(const Hyperparams&, const Hyperparams&) = default;
};

inline void to_json(nlohmann::json& j, const Hyperparams& h) {
  j = {{"n_conv", h.n_conv},   {"n_filters", h.n_filters},
       {"n_dense", h.n_dense}, {"n_units", h.n_units},
       {"activation", nn::to_string(h.activation)},
       {"dropout", h.dropout}, {"l1", h.l1},
       {"l2", h.l2},           {"batch_size", h.batch_size},
       {"batchnorm", h.batchnorm}};
}

inline void from_json(const nlohmann::json& j, Hyperparams& h) {
  Hyperparams d;
  h.n_conv = j.value("n_conv", d.n_conv);
  h.n_filters = j.value("n_filters", d.n_filters);
  h.n_dense = j.value("n_dense", d.n_dense);
  h.n_units = j.value("n_units", d.n_units);
  h.activation = nn::activation_from_string(j.value("activation", std::string("relu")));
  h.dropout = j.value("dropout", d.dropout);
  h.l1 = j.value("l1", d.l1);
  h.l2 = j.value("l2", d.l2);
  h.batch_size = j.value("batch_size", d.batch_size);
  h.batchnorm = j.value("batchnorm", d.batchnorm);
}

class InfeasibleArchitecture : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Spatial side after each conv+pool block, e.g. 128 -> {126, 63, 61, 30, ...}.
/// Stops at the first block that cannot be applied.
inline std::vector<int> spatial_ladder(int input_size, int n_conv) {
  std::vector<int> ladder;
  int s = input_size;
  for (int i = 0; i < n_conv; ++i) {
    if (s < 3) break;
    s -= 2;
    ladder.push_back(s);
    if (s < 2) break;
    s /= 2;
    ladder.push_back(s);
  }
  return ladder;
}

inline bool conv_stack_feasible(int input_size, int n_conv) {
  const auto ladder = spatial_ladder(input_size, n_conv);
  return ladder.size() == static_cast<std::size_t>(2 * n_conv) && ladder.back() >= 1;
}

inline int max_conv_blocks(int input_size) {
  int n = 0;
  while (conv_stack_feasible(input_size, n + 1)) ++n;
  return n;
}

inline std::vector<nn::LayerSpec> posenet_layers(const Hyperparams& hp, std::size_t n_out) {
  using nn::LayerSpec;
  std::vector<LayerSpec> specs;
  for (int i = 0; i < hp.n_conv; ++i) {
    specs.push_back(LayerSpec::conv3x3(static_cast<std::size_t>(hp.n_filters)));
    if (hp.batchnorm) specs.push_back(LayerSpec::batchnorm());
    specs.push_back(LayerSpec::act(hp.activation));
    specs.push_back(LayerSpec::maxpool2x2());
  }
  specs.push_back(LayerSpec::flatten());
  for (int i = 0; i < hp.n_dense; ++i) {
    specs.push_back(LayerSpec::dropout(hp.dropout));
    specs.push_back(LayerSpec::dense(static_cast<std::size_t>(hp.n_units)));
    specs.push_back(LayerSpec::act(hp.activation));
  }
  specs.push_back(LayerSpec::dropout(hp.dropout));
  specs.push_back(LayerSpec::linear_output(n_out));
  return specs;
}

template <typename T = double>
nn::Model<T> build(const Hyperparams& hp, std::size_t n_out, int input_size, std::uint64_t seed = 0) {
  if (hp.n_conv < 1 || hp.n_dense < 0 || hp.n_filters < 1 || hp.n_units < 1)
    throw std::invalid_argument("hyperparameters out of range");
  if (!conv_stack_feasible(input_size, hp.n_conv))
    throw InfeasibleArchitecture(std::to_string(hp.n_conv) + " conv+pool blocks do not fit a " +
                                 std::to_string(input_size) + "x" + std::to_string(input_size) +
                                 " input (maximum " + std::to_string(max_conv_blocks(input_size)) +
                                 ")");
  const auto side = static_cast<std::size_t>(input_size);
  return nn::Model<T>({1, 1, side, side}, posenet_layers(hp, n_out), seed);
}

struct FitOptions {
  double learning_rate = 1e-4;
  double lr_decay = 1e-6;
  int patience_epochs = 10;
  int max_epochs = 200;
};

template <typename T>
struct FitResult {
  nn::Model<T> model;
  double best_val_loss = 0.0;
  nn::TrainHistory history;
  LabelScaler scaler;
};

/// Trains on label-normalised data; the returned loss equals the validation
/// MSE weighted by 1/max^2 in original units.
template <typename T = double>
FitResult<T> fit(const Hyperparams& hp, const Dataset& train_set, const Dataset& val_set,
                 std::uint64_t seed, const FitOptions& opts = {},
                 const std::function<void(int, double, double)>& on_epoch = {}) {
  if (train_set.object_type != val_set.object_type)
    throw std::invalid_argument("training and validation sets have different object types");
  if (train_set.image_size() != val_set.image_size())
    throw std::invalid_argument("training and validation images differ in size");
  const auto scaler = LabelScaler::from_ranges(train_set.label_ranges, train_set.object_type);
  const auto train_data = to_labelled_set<T>(train_set, scaler);
  const auto val_data = to_labelled_set<T>(val_set, scaler);
  auto model = build<T>(hp, label_size(train_set.object_type), train_set.image_size(),
                        derive_seed(seed, 0xb0));
  nn::TrainConfig cfg;
  cfg.learning_rate = opts.learning_rate;
  cfg.lr_decay = opts.lr_decay;
  cfg.patience_epochs = opts.patience_epochs;
  cfg.max_epochs = opts.max_epochs;
  cfg.batch_size = std::min<std::size_t>(static_cast<std::size_t>(hp.batch_size), train_set.size());
  cfg.l1_coeff = hp.l1;
  cfg.l2_coeff = hp.l2;
  cfg.seed = seed;
  auto history = nn::train(model, train_data, val_data, cfg, on_epoch);
  const double best = history.best_val_loss;
  return {std::move(model), best, std::move(history), scaler};
}

/// Predictions in original label units.
template <typename T>
std::vector<std::vector<double>> predict_poses(nn::Model<T>& model, const LabelScaler& scaler,
                                               const nn::Tensor<T>& images) {
  const auto raw = nn::predict(model, images);
  const auto k = raw.shape().c;
  std::vector<std::vector<double>> out(raw.shape().n, std::vector<double>(k));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::vector<double> v(k);
    for (std::size_t c = 0; c < k; ++c) v[c] = static_cast<double>(raw(i, c));
    out[i] = scaler.inverse(v);
  }
  return out;
}

template <typename T>
Pose estimate_pose(nn::Model<T>& model, const LabelScaler& scaler, ObjectType type,
                   const TactileImage& image) {
  const auto sz = static_cast<std::size_t>(image.size());
  nn::Tensor<T> x({1, 1, sz, sz});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(image.pixels()[i]);
  return pose_from_vector(type, predict_poses(model, scaler, x).front());
}

struct ComponentReport {
  Component component{};
  double mae = 0.0;
  std::vector<double> sorted_labels;       // ascending
  std::vector<double> sorted_predictions;  // aligned with sorted_labels
  std::vector<double> smoothed;            // moving average of sorted_predictions
};

struct EvalReport {
  ObjectType object_type = ObjectType::surface;
  std::size_t window = 0;
  std::vector<ComponentReport> components;
  std::vector<std::size_t> ids;
  std::vector<std::vector<double>> labels;
  std::vector<std::vector<double>> predictions;

  std::vector<double> mae() const {
    std::vector<double> m;
    for (const auto& c : components) m.push_back(c.mae);
    return m;
  }
};

/// Centred moving average with window w, truncated at the ends.
inline std::vector<double> moving_average(std::span<const double> v, std::size_t w) {
  const auto n = v.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + v[i];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= w / 2 ? i - w / 2 : 0;
    const std::size_t hi = std::min(n, i + (w - w / 2));
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

/// MAE per component plus label-ordered, smoothed prediction series.
inline EvalReport make_report(ObjectType type, std::vector<std::size_t> ids,
                              std::vector<std::vector<double>> labels,
                              std::vector<std::vector<double>> predictions,
                              std::size_t max_window = 100) {
  const auto n = labels.size();
  if (n == 0) throw std::invalid_argument("cannot evaluate on an empty test set");
  if (predictions.size() != n) throw std::invalid_argument("prediction count mismatch");
  EvalReport r;
  r.object_type = type;
  r.window = std::min(max_window, n);
  const auto comps = label_components(type);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    ComponentReport cr;
    cr.component = comps[c];
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::abs(predictions[i][c] - labels[i][c]);
    cr.mae = sum / static_cast<double>(n);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](auto a, auto b) { return labels[a][c] < labels[b][c]; });
    for (auto i : order) {
      cr.sorted_labels.push_back(labels[i][c]);
      cr.sorted_predictions.push_back(predictions[i][c]);
    }
    cr.smoothed = moving_average(cr.sorted_predictions, r.window);
    r.components.push_back(std::move(cr));
  }
  r.ids = std::move(ids);
  r.labels = std::move(labels);
  r.predictions = std::move(predictions);
  return r;
}

template <typename T>
EvalReport evaluate(nn::Model<T>& model, const LabelScaler& scaler, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("cannot evaluate on an empty test set");
  if (model.num_outputs() != label_size(test.object_type))
    throw std::invalid_argument("model outputs do not match the test set object type");
  auto preds = predict_poses(model, scaler, image_tensor<T>(test));
  std::vector<std::size_t> ids;
  std::vector<std::vector<double>> labels;
  for (const auto& s : test.samples) {
    ids.push_back(s.id);
    labels.push_back(to_vector(s.label));
  }
  return make_report(test.object_type, std::move(ids), std::move(labels), std::move(preds));
}

inline nlohmann::json report_summary(const EvalReport& r) {
  nlohmann::json mae = nlohmann::json::object();
  for (const auto& c : r.components) mae[std::string(to_string(c.component))] = c.mae;
  return {{"object_type", std::string(to_string(r.object_type))},
          {"samples", r.labels.size()},
          {"smoothing_window", r.window},
          {"mae", mae}};
}

/// Per-sample CSV: id, label_<c>..., pred_<c>...
inline std::string report_csv(const EvalReport& r) {
  std::string out = "id";
  for (const auto& c : r.components) out += ",label_" + std::string(to_string(c.component));
  for (const auto& c : r.components) out += ",pred_" + std::string(to_string(c.component));
  out += "\r\n";
  for (std::size_t i = 0; i < r.labels.size(); ++i) {
    out += std::to_string(r.ids[i]);
    for (double v : r.labels[i]) out += "," + detail::format_double(v);
    for (double v : r.predictions[i]) out += "," + detail::format_double(v);
    out += "\r\n";
  }
  return out;
}

/// Checkpoint metadata needed to use a trained network as a pose estimator.
inline nlohmann::json posenet_metadata(const Hyperparams& hp, ObjectType type,
                                       const LabelScaler& scaler, int image_size,
                                       const nlohmann::json& simulator) {
  return {{"kind", "posenet"},
          {"hyperparams", hp},
          {"object_type", std::string(to_string(type))},
          {"label_scales", scaler.scales()},
          {"image_size", image_size},
          {"simulator", simulator}};
}

template <typename T>
struct PoseNet {
  nn::Model<T> model;
  LabelScaler scaler;
  ObjectType object_type = ObjectType::surface;
  Hyperparams hyperparams;
  nlohmann::json simulator;

  Pose estimate(const TactileImage& img) { return estimate_pose(model, scaler, object_type, img); }
};

template <typename T = double>
PoseNet<T> load_posenet(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint<T>(path);
  const nlohmann::json m = ck.metadata;
  if (m.value("kind", std::string()) != "posenet")
    throw nn::CheckpointError(path.string() + ": not a pose network checkpoint");
  PoseNet<T> net{std::move(ck.model),
                 LabelScaler(m.at("label_scales").get<std::vector<double>>()),
                 object_type_from_string(m.at("object_type").get<std::string>()),
                 m.at("hyperparams").get<Hyperparams>(), m.value("simulator", nlohmann::json())};
  return net;
}

}  // namespace tactipose
