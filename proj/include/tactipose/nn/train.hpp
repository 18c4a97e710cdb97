#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tactipose/nn/model.hpp"

namespace tactipose::nn {

/// mean over batch of sum_c weight_c * (pred_c - target_c)^2.
template <typename T>
double weighted_mse(const Tensor<T>& pred, const Tensor<T>& target, std::span<const double> weights,
                    Tensor<T>* grad = nullptr) {
  if (pred.shape() != target.shape())
    throw std::invalid_argument("prediction shape " + pred.shape().str() +
                                " does not match target shape " + target.shape().str());
  const auto n = pred.shape().n;
  const auto k = pred.shape().per_sample();
  if (weights.size() != k)
    throw std::invalid_argument("expected " + std::to_string(k) + " loss weights, got " +
                                std::to_string(weights.size()));
  if (n == 0) throw std::invalid_argument("empty batch");
  if (grad) grad->assign(pred.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < k; ++c) {
      const double d = static_cast<double>(pred[i * k + c]) - static_cast<double>(target[i * k + c]);
      loss += weights[c] * d * d;
      if (grad) (*grad)[i * k + c] = static_cast<T>(2.0 * weights[c] * d / static_cast<double>(n));
    }
  return loss / static_cast<double>(n);
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double decay = 1e-6;  // alpha_t = alpha / (1 + decay * t)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

/// One bias-corrected Adam update over all parameters; t counts updates
/// starting at 1.
template <typename T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state, const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (auto* p : params) {
      state.m.emplace_back(p->value.size(), 0.0);
      state.v.emplace_back(p->value.size(), 0.0);
    }
  }
  ++state.t;
  const double t = static_cast<double>(state.t);
  const double lr = cfg.learning_rate / (1.0 + cfg.decay * t);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& w = params[i]->value;
    const auto& g = params[i]->grad;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] = static_cast<T>(w[k] - lr * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
  }
}

/// Tracks the best validation loss and signals a stop once `patience`
/// epochs pass without improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  }

  /// Returns true when training should stop after this epoch (1-based).
  bool update(int epoch, double val_loss) {
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      improved_ = true;
    } else {
      improved_ = false;
    }
    return epoch - best_epoch_ >= patience_;
  }

  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double lr_decay = 1e-6;
  std::size_t batch_size = 32;
  int patience_epochs = 10;
  int max_epochs = 200;
  double l1_coeff = 0.0;
  double l2_coeff = 0.0;
  std::uint64_t seed = 0;
  std::vector<double> loss_weights;  // empty: all ones

  void validate() const {
    if (learning_rate < 0 || lr_decay < 0 || l1_coeff < 0 || l2_coeff < 0)
      throw std::invalid_argument("training coefficients must be non-negative");
    if (patience_epochs < 1) throw std::invalid_argument("patience must be at least 1");
    if (batch_size < 1 || max_epochs < 1)
      throw std::invalid_argument("batch size and max epochs must be positive");
  }
};

/// Inputs with matching regression targets. Nothing else reaches training.
template <typename T>
struct LabelledSet {
  Tensor<T> inputs;
  Tensor<T> targets;

  std::size_t size() const { return inputs.shape().n; }
};

struct TrainHistory {
  std::vector<double> train_loss;  // data loss + penalty, mean over batches
  std::vector<double> val_loss;    // weighted MSE on the validation set
  int best_epoch = 0;
  int stopped_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, std::size_t batch)
      : std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const { return epoch_; }
  std::size_t batch() const { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

template <typename T>
double evaluate_loss(Model<T>& model, const LabelledSet<T>& data, std::span<const double> weights,
                     std::size_t batch = 64) {
  const auto pred = predict(model, data.inputs, batch);
  return weighted_mse(pred, data.targets, weights);
}

/// Mini-batch Adam with early stopping on validation loss. On return the
/// model holds the parameters of the best validation epoch.
template <typename T>
TrainHistory train(Model<T>& model, const LabelledSet<T>& train_set, const LabelledSet<T>& val_set,
                   const TrainConfig& cfg,
                   const std::function<void(int, double, double)>& on_epoch = {}) {
  cfg.validate();
  const std::size_t n = train_set.size();
  if (n == 0 || val_set.size() == 0) throw std::invalid_argument("training sets must be non-empty");
  if (cfg.batch_size > n)
    throw std::invalid_argument("batch size " + std::to_string(cfg.batch_size) +
                                " exceeds training set size " + std::to_string(n));
  const std::size_t k = model.num_outputs();
  std::vector<double> weights = cfg.loss_weights;
  if (weights.empty()) weights.assign(k, 1.0);

  const Regularization reg{cfg.l1_coeff, cfg.l2_coeff};
  const AdamConfig adam{cfg.learning_rate, cfg.lr_decay};
  AdamState<T> adam_state;
  Rng shuffle_rng(cfg.seed, 0x5bu);
  model.seed(derive_seed(cfg.seed, 0xd0));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  EarlyStopping stopper(cfg.patience_epochs);
  TrainHistory hist;
  auto best_state = model.state();
  auto params = model.parameters();
  Tensor<T> grad;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < n; first += cfg.batch_size, ++batches) {
      const auto count = std::min(cfg.batch_size, n - first);
      const std::span<const std::size_t> rows(order.data() + first, count);
      const auto x = train_set.inputs.gather(rows);
      const auto y = train_set.targets.gather(rows);
      const auto pred = model.forward(x, Mode::training);
      const double loss = weighted_mse(pred, y, weights, &grad) + model.penalty(reg);
      if (!std::isfinite(loss)) throw TrainingDiverged(epoch, batches);
      model.backward(grad, reg);
      adam_step<T>(params, adam_state, adam);
      epoch_loss += loss;
    }
    const double val = evaluate_loss(model, val_set, weights);
    if (!std::isfinite(val)) throw TrainingDiverged(epoch, batches);
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches));
    hist.val_loss.push_back(val);
    hist.stopped_epoch = epoch;
    const bool stop = stopper.update(epoch, val);
    if (stopper.improved()) best_state = model.state();
    if (on_epoch) on_epoch(epoch, hist.train_loss.back(), val);
    if (stop) break;
  }
  hist.best_epoch = stopper.best_epoch();
  hist.best_val_loss = stopper.best_loss();
  model.load_state(best_state);
  return hist;
}

}  // namespace tactipose::nn
