#pragma once

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tactipose/nn/layers.hpp"
#include "tactipose/nn/tensor.hpp"
#include "tactipose/random.hpp"

namespace tactipose::nn {

/// L1/L2 coefficients applied to regularised (dense and output) weights.
struct Regularization {
  double l1 = 0.0;
  double l2 = 0.0;
};

template <typename T>
class Model {
 public:
  Model() = default;

  /// Builds the layer chain for per-sample input (channels, height, width)
  /// and draws initial weights from `seed`.
  Model(Shape input, std::vector<LayerSpec> specs, std::uint64_t seed = 0)
      : input_(input), specs_(std::move(specs)), rng_(seed, 0x4d0de1) {
    input_.n = 1;
    Rng init(seed, 0x1417);
    Shape s = input_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      auto layer = make_layer<T>(specs_[i]);
      try {
        layer->initialize(s, init);
        s = layer->output_shape(s);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(describe(i) + ": " + e.what());
      }
      layers_.push_back(std::move(layer));
    }
    output_ = s;
  }

  Model(const Model& other)
      : input_(other.input_), output_(other.output_), specs_(other.specs_), rng_(other.rng_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Model& operator=(const Model& other) {
    if (this != &other) {
      Model tmp(other);
      *this = std::move(tmp);
    }
    return *this;
  }
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_outputs() const { return output_.c; }

  /// Reseeds the dropout stream.
  void seed(std::uint64_t s) { rng_ = Rng(s, 0x4d0de1); }

  Tensor<T> forward(const Tensor<T>& batch, Mode mode) {
    const auto& s = batch.shape();
    if (s.c != input_.c || s.h != input_.h || s.w != input_.w)
      throw std::invalid_argument("input shape " + s.str() + " does not match model input " +
                                  input_.str());
    Tensor<T> cur = batch, next;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      try {
        layers_[i]->forward(cur, next, mode, rng_);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(describe(i) + ": " + e.what());
      }
      std::swap(cur, next);
    }
    recorded_ = (mode == Mode::training);
    return cur;
  }

  /// Zeroes, then fills, every parameter gradient from dLoss/dOutput of the
  /// last training-mode forward pass, plus penalty gradients.
  void backward(const Tensor<T>& grad_output, const Regularization& reg = {}) {
    if (!recorded_) throw std::logic_error("backward called without a training-mode forward pass");
    zero_grad();
    Tensor<T> g = grad_output, gin;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      layers_[i]->backward(g, gin);
      std::swap(g, gin);
    }
    if (reg.l1 != 0.0 || reg.l2 != 0.0) {
      const T l1 = static_cast<T>(reg.l1), l2x2 = static_cast<T>(2.0 * reg.l2);
      for (auto* p : parameters()) {
        if (!p->regularized) continue;
        for (std::size_t k = 0; k < p->value.size(); ++k) {
          const T w = p->value[k];
          const T sign = w > T{0} ? T{1} : (w < T{0} ? T{-1} : T{0});
          p->grad[k] += l1 * sign + l2x2 * w;
        }
      }
    }
    recorded_ = false;
  }

  double penalty(const Regularization& reg) const {
    if (reg.l1 == 0.0 && reg.l2 == 0.0) return 0.0;
    double s1 = 0, s2 = 0;
    for (auto* p : const_cast<Model*>(this)->parameters()) {
      if (!p->regularized) continue;
      for (auto w : p->value.values()) {
        s1 += std::abs(static_cast<double>(w));
        s2 += static_cast<double>(w) * w;
      }
    }
    return reg.l1 * s1 + reg.l2 * s2;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->parameters()) out.push_back(p);
    return out;
  }

  std::vector<Tensor<T>*> buffers() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_)
      for (auto* b : l->buffers()) out.push_back(b);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* p : const_cast<Model*>(this)->parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->grad.fill(T{0});
  }

  /// Parameter values followed by buffers; restores with load_state().
  std::vector<std::vector<T>> state() const {
    std::vector<std::vector<T>> out;
    auto* self = const_cast<Model*>(this);
    for (auto* p : self->parameters()) out.push_back(p->value.values());
    for (auto* b : self->buffers()) out.push_back(b->values());
    return out;
  }

  void load_state(const std::vector<std::vector<T>>& st) {
    auto ps = parameters();
    auto bs = buffers();
    if (st.size() != ps.size() + bs.size())
      throw std::invalid_argument("model state has the wrong number of tensors");
    std::size_t k = 0;
    for (auto* p : ps) assign_checked(p->value, st[k++]);
    for (auto* b : bs) assign_checked(*b, st[k++]);
  }

  std::string describe(std::size_t i) const {
    return "layer " + std::to_string(i) + " (" + layer_name(specs_[i]) + ")";
  }

 private:
  static void assign_checked(Tensor<T>& t, const std::vector<T>& v) {
    if (v.size() != t.size()) throw std::invalid_argument("model state tensor size mismatch");
    t.values() = v;
  }

  Shape input_{};
  Shape output_{};
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  Rng rng_;
  bool recorded_ = false;
};

/// Inference over a dataset in chunks.
template <typename T>
Tensor<T> predict(Model<T>& model, const Tensor<T>& inputs, std::size_t batch = 64) {
  const auto n = inputs.shape().n;
  Tensor<T> out({n, model.num_outputs(), 1, 1});
  for (std::size_t first = 0; first < n; first += batch) {
    const auto count = std::min(batch, n - first);
    const auto y = model.forward(inputs.slice(first, count), Mode::inference);
    std::copy(y.values().begin(), y.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(first * model.num_outputs()));
  }
  return out;
}

}  // namespace tactipose::nn
