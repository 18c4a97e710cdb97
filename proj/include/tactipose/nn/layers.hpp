#pragma once

// Layer set for pose regression: valid 3x3 convolution, 2x2 max pooling,
// dense and linear output layers, ReLU/ELU, batch normalisation, inverted
// dropout and flatten. Every layer caches what its backward pass needs from
// the most recent training-mode forward pass.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tactipose/nn/tensor.hpp"
#include "tactipose/random.hpp"

namespace tactipose::nn {

enum class Mode { training, inference };
enum class Activation { relu, elu };

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "elu"; }
inline Activation activation_from_string(const std::string& s) {
  if (s == "relu" || s == "ReLU") return Activation::relu;
  if (s == "elu" || s == "ELU") return Activation::elu;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

enum class LayerKind : std::uint8_t {
  conv3x3 = 1,
  maxpool2x2 = 2,
  dense = 3,
  activation = 4,
  batchnorm = 5,
  dropout = 6,
  flatten = 7,
  linear_output = 8,
};

/// Declarative layer description; `size` is filters or units, `rate` the
/// dropout probability.
struct LayerSpec {
  LayerKind kind{};
  std::size_t size = 0;
  Activation activation = Activation::relu;
  double rate = 0.0;

  static LayerSpec conv3x3(std::size_t filters) { return {LayerKind::conv3x3, filters}; }
  static LayerSpec maxpool2x2() { return {LayerKind::maxpool2x2}; }
  static LayerSpec dense(std::size_t units) { return {LayerKind::dense, units}; }
  static LayerSpec linear_output(std::size_t units) { return {LayerKind::linear_output, units}; }
  static LayerSpec act(Activation a) { return {LayerKind::activation, 0, a}; }
  static LayerSpec batchnorm() { return {LayerKind::batchnorm}; }
  static LayerSpec dropout(double rate) { return {LayerKind::dropout, 0, Activation::relu, rate}; }
  static LayerSpec flatten() { return {LayerKind::flatten}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::string layer_name(const LayerSpec& s) {
  switch (s.kind) {
    case LayerKind::conv3x3: return "Conv3x3(" + std::to_string(s.size) + ")";
    case LayerKind::maxpool2x2: return "MaxPool2x2";
    case LayerKind::dense: return "Dense(" + std::to_string(s.size) + ")";
    case LayerKind::activation: return "Activation(" + to_string(s.activation) + ")";
    case LayerKind::batchnorm: return "BatchNorm";
    case LayerKind::dropout: return "Dropout(" + std::to_string(s.rate) + ")";
    case LayerKind::flatten: return "Flatten";
    case LayerKind::linear_output: return "LinearOutput(" + std::to_string(s.size) + ")";
  }
  return "?";
}

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool regularized = false;  // subject to L1/L2 penalties
};

template <typename T>
class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }

  /// Per-sample output shape (n ignored) or throws on incompatible input.
  virtual Shape output_shape(const Shape& in) const = 0;
  virtual void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng& rng) = 0;
  /// Accumulates parameter gradients and writes the input gradient.
  virtual void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) = 0;

  virtual std::vector<Parameter<T>*> parameters() { return {}; }
  /// Non-trainable state saved with the model (batchnorm running stats).
  virtual std::vector<Tensor<T>*> buffers() { return {}; }
  virtual void initialize(const Shape& /*in*/, Rng& /*rng*/) {}
  virtual std::unique_ptr<Layer> clone() const = 0;

 protected:
  LayerSpec spec_;
};

namespace detail {

template <typename T>
void init_uniform(Tensor<T>& t, double fan_in, Rng& rng) {
  const double s = std::sqrt(1.0 / fan_in);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-s, s));
}

}  // namespace detail

template <typename T>
class Conv3x3 final : public Layer<T> {
 public:
  explicit Conv3x3(LayerSpec spec) : Layer<T>(spec) {}

  Shape output_shape(const Shape& in) const override {
    if (in.h < 3 || in.w < 3)
      throw std::invalid_argument("input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                                  " is smaller than the 3x3 kernel");
    if (in_channels_ != 0 && in.c != in_channels_)
      throw std::invalid_argument("expected " + std::to_string(in_channels_) +
                                  " input channels, got " + std::to_string(in.c));
    return {in.n, this->spec_.size, in.h - 2, in.w - 2};
  }

  void initialize(const Shape& in, Rng& rng) override {
    in_channels_ = in.c;
    weight_.value.assign({this->spec_.size, in.c, 3, 3});
    weight_.grad.assign(weight_.value.shape());
    bias_.value.assign({this->spec_.size, 1, 1, 1});
    bias_.grad.assign(bias_.value.shape());
    detail::init_uniform(weight_.value, static_cast<double>(9 * in.c), rng);
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng&) override {
    const auto& s = in.shape();
    const Shape os = output_shape(s);
    out.assign(os);
    const std::size_t oh = os.h, ow = os.w, iw = s.w;
    const T* wts = weight_.value.data();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t o = 0; o < os.c; ++o) {
        T* op = &out(n, o);
        std::fill_n(op, oh * ow, bias_.value[o]);
        for (std::size_t c = 0; c < s.c; ++c) {
          const T* ip = &in(n, c);
          const T* k = wts + (o * s.c + c) * 9;
          for (std::size_t y = 0; y < oh; ++y) {
            T* orow = op + y * ow;
            const T* r0 = ip + y * iw;
            const T* r1 = r0 + iw;
            const T* r2 = r1 + iw;
            for (std::size_t x = 0; x < ow; ++x) {
              orow[x] += k[0] * r0[x] + k[1] * r0[x + 1] + k[2] * r0[x + 2] + k[3] * r1[x] +
                         k[4] * r1[x + 1] + k[5] * r1[x + 2] + k[6] * r2[x] + k[7] * r2[x + 1] +
                         k[8] * r2[x + 2];
            }
          }
        }
      }
    }
    if (mode == Mode::training) input_ = in;
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    const auto& s = input_.shape();
    const auto& os = grad_out.shape();
    grad_in.assign(s);
    const std::size_t oh = os.h, ow = os.w, iw = s.w;
    const T* wts = weight_.value.data();
    T* dw = weight_.grad.data();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t o = 0; o < os.c; ++o) {
        const T* gp = &grad_out(n, o);
        T bsum = 0;
        for (std::size_t i = 0; i < oh * ow; ++i) bsum += gp[i];
        bias_.grad[o] += bsum;
        for (std::size_t c = 0; c < s.c; ++c) {
          const T* ip = &input_(n, c);
          T* gip = &grad_in(n, c);
          const T* k = wts + (o * s.c + c) * 9;
          T* dk = dw + (o * s.c + c) * 9;
          T acc[9] = {};
          for (std::size_t y = 0; y < oh; ++y) {
            const T* grow = gp + y * ow;
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const T* irow = ip + (y + ky) * iw;
              T* girow = gip + (y + ky) * iw;
              const T k0 = k[ky * 3], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
              T a0 = 0, a1 = 0, a2 = 0;
              for (std::size_t x = 0; x < ow; ++x) {
                const T g = grow[x];
                a0 += g * irow[x];
                a1 += g * irow[x + 1];
                a2 += g * irow[x + 2];
              }
              // Separate passes so each one vectorizes without aliasing.
              for (std::size_t x = 0; x < ow; ++x) girow[x] += k0 * grow[x];
              for (std::size_t x = 0; x < ow; ++x) girow[x + 1] += k1 * grow[x];
              for (std::size_t x = 0; x < ow; ++x) girow[x + 2] += k2 * grow[x];
              acc[ky * 3] += a0;
              acc[ky * 3 + 1] += a1;
              acc[ky * 3 + 2] += a2;
            }
          }
          for (int t = 0; t < 9; ++t) dk[t] += acc[t];
        }
      }
    }
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv3x3>(*this); }

 private:
  std::size_t in_channels_ = 0;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class MaxPool2x2 final : public Layer<T> {
 public:
  explicit MaxPool2x2(LayerSpec spec) : Layer<T>(spec) {}

  Shape output_shape(const Shape& in) const override {
    if (in.h < 2 || in.w < 2)
      throw std::invalid_argument("input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                                  " cannot be pooled 2x2");
    return {in.n, in.c, in.h / 2, in.w / 2};
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng&) override {
    const auto& s = in.shape();
    const Shape os = output_shape(s);
    out.assign(os);
    if (mode == Mode::training) {
      in_shape_ = s;
      argmax_.assign(os.size(), 0);
    }
    std::size_t k = 0;
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* ip = &in(n, c);
        const std::size_t base = (n * s.c + c) * s.h * s.w;
        for (std::size_t y = 0; y < os.h; ++y)
          for (std::size_t x = 0; x < os.w; ++x, ++k) {
            std::size_t best = (2 * y) * s.w + 2 * x;
            const std::size_t cand[3] = {best + 1, best + s.w, best + s.w + 1};
            for (auto i : cand)
              if (ip[i] > ip[best]) best = i;
            out[k] = ip[best];
            if (mode == Mode::training) argmax_[k] = base + best;
          }
      }
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    grad_in.assign(in_shape_);
    for (std::size_t k = 0; k < grad_out.size(); ++k) grad_in[argmax_[k]] += grad_out[k];
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2x2>(*this); }

 private:
  Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

/// Fully connected layer; also used for the linear output layer.
template <typename T>
class Dense final : public Layer<T> {
 public:
  explicit Dense(LayerSpec spec) : Layer<T>(spec) {}

  Shape output_shape(const Shape& in) const override {
    if (in.h != 1 || in.w != 1)
      throw std::invalid_argument("dense layer needs flat input, got " + in.str());
    if (in_features_ != 0 && in.c != in_features_)
      throw std::invalid_argument("expected " + std::to_string(in_features_) +
                                  " input features, got " + std::to_string(in.c));
    return {in.n, this->spec_.size, 1, 1};
  }

  void initialize(const Shape& in, Rng& rng) override {
    in_features_ = in.c;
    weight_.value.assign({this->spec_.size, in.c, 1, 1});
    weight_.grad.assign(weight_.value.shape());
    weight_.regularized = true;
    bias_.value.assign({this->spec_.size, 1, 1, 1});
    bias_.grad.assign(bias_.value.shape());
    detail::init_uniform(weight_.value, static_cast<double>(in.c), rng);
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng&) override {
    const Shape os = output_shape(in.shape());
    out.assign(os);
    const std::size_t nin = in_features_, nout = os.c;
    for (std::size_t n = 0; n < os.n; ++n) {
      const T* x = in.data() + n * nin;
      for (std::size_t u = 0; u < nout; ++u) {
        const T* w = weight_.value.data() + u * nin;
        T acc = 0;
        for (std::size_t i = 0; i < nin; ++i) acc += w[i] * x[i];
        out(n, u) = acc + bias_.value[u];
      }
    }
    if (mode == Mode::training) input_ = in;
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    grad_in.assign(input_.shape());
    const std::size_t nin = in_features_, nout = this->spec_.size;
    for (std::size_t n = 0; n < grad_out.shape().n; ++n) {
      const T* x = input_.data() + n * nin;
      T* gx = grad_in.data() + n * nin;
      for (std::size_t u = 0; u < nout; ++u) {
        const T g = grad_out(n, u);
        if (g == T{0}) continue;
        bias_.grad[u] += g;
        T* dw = weight_.grad.data() + u * nin;
        const T* w = weight_.value.data() + u * nin;
        for (std::size_t i = 0; i < nin; ++i) {
          dw[i] += g * x[i];
          gx[i] += g * w[i];
        }
      }
    }
  }

  std::vector<Parameter<T>*> parameters() override { return {&weight_, &bias_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dense>(*this); }

 private:
  std::size_t in_features_ = 0;
  Parameter<T> weight_, bias_;
  Tensor<T> input_;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(LayerSpec spec) : Layer<T>(spec) {}

  Shape output_shape(const Shape& in) const override { return in; }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng&) override {
    out.assign(in.shape());
    if (this->spec_.activation == Activation::relu) {
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{0} ? in[i] : T{0};
    } else {
      for (std::size_t i = 0; i < in.size(); ++i)
        out[i] = in[i] > T{0} ? in[i] : std::expm1(in[i]);
    }
    if (mode == Mode::training) {
      input_ = in;
      output_ = out;
    }
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    grad_in.assign(input_.shape());
    if (this->spec_.activation == Activation::relu) {
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        grad_in[i] = input_[i] > T{0} ? grad_out[i] : T{0};
    } else {
      for (std::size_t i = 0; i < grad_in.size(); ++i)
        grad_in[i] = input_[i] > T{0} ? grad_out[i] : grad_out[i] * (output_[i] + T{1});
    }
  }

  std::unique_ptr<Layer<T>> clone() const override {
    return std::make_unique<ActivationLayer>(*this);
  }

 private:
  Tensor<T> input_, output_;
};

/// Per-channel normalisation over (batch, height, width).
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  static constexpr double kMomentum = 0.99;
  static constexpr double kEpsilon = 1e-7;

  explicit BatchNorm(LayerSpec spec) : Layer<T>(spec) {}

  Shape output_shape(const Shape& in) const override {
    if (channels_ != 0 && in.c != channels_)
      throw std::invalid_argument("expected " + std::to_string(channels_) + " channels, got " +
                                  std::to_string(in.c));
    return in;
  }

  void initialize(const Shape& in, Rng&) override {
    channels_ = in.c;
    gamma_.value.assign({in.c, 1, 1, 1}, T{1});
    gamma_.grad.assign(gamma_.value.shape());
    beta_.value.assign({in.c, 1, 1, 1});
    beta_.grad.assign(beta_.value.shape());
    running_mean_.assign({in.c, 1, 1, 1});
    running_var_.assign({in.c, 1, 1, 1}, T{1});
  }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng&) override {
    const auto& s = output_shape(in.shape());
    out.assign(s);
    const std::size_t plane = s.h * s.w;
    const double count = static_cast<double>(s.n * plane);
    if (mode == Mode::training) {
      normalized_.assign(s);
      inv_std_.assign(s.c, 0.0);
    }
    for (std::size_t c = 0; c < s.c; ++c) {
      double mean, var;
      if (mode == Mode::training) {
        double sum = 0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* p = &in(n, c);
          for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        mean = sum / count;
        double sq = 0;
        for (std::size_t n = 0; n < s.n; ++n) {
          const T* p = &in(n, c);
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean;
            sq += d * d;
          }
        }
        var = sq / count;
        running_mean_[c] =
            static_cast<T>(kMomentum * running_mean_[c] + (1.0 - kMomentum) * mean);
        running_var_[c] = static_cast<T>(kMomentum * running_var_[c] + (1.0 - kMomentum) * var);
      } else {
        mean = running_mean_[c];
        var = running_var_[c];
      }
      const double inv = 1.0 / std::sqrt(var + kEpsilon);
      if (mode == Mode::training) inv_std_[c] = inv;
      const T g = gamma_.value[c], b = beta_.value[c];
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = &in(n, c);
        T* q = &out(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const T xhat = static_cast<T>((p[i] - mean) * inv);
          if (mode == Mode::training) (&normalized_(n, c))[i] = xhat;
          q[i] = g * xhat + b;
        }
      }
    }
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    const auto& s = normalized_.shape();
    grad_in.assign(s);
    const std::size_t plane = s.h * s.w;
    const double count = static_cast<double>(s.n * plane);
    for (std::size_t c = 0; c < s.c; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = &grad_out(n, c);
        const T* xh = &normalized_(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * xh[i];
        }
      }
      beta_.grad[c] += static_cast<T>(sum_g);
      gamma_.grad[c] += static_cast<T>(sum_gx);
      const double k = gamma_.value[c] * inv_std_[c] / count;
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* g = &grad_out(n, c);
        const T* xh = &normalized_(n, c);
        T* gi = &grad_in(n, c);
        for (std::size_t i = 0; i < plane; ++i)
          gi[i] = static_cast<T>(k * (count * g[i] - sum_g - xh[i] * sum_gx));
      }
    }
  }

  std::vector<Parameter<T>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Tensor<T>*> buffers() override { return {&running_mean_, &running_var_}; }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm>(*this); }

 private:
  std::size_t channels_ = 0;
  Parameter<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> normalized_;
  std::vector<double> inv_std_;
};

/// Inverted dropout: survivors are scaled by 1/(1 - rate) during training.
template <typename T>
class Dropout final : public Layer<T> {
 public:
  explicit Dropout(LayerSpec spec) : Layer<T>(spec) {
    if (spec.rate < 0.0 || spec.rate >= 1.0)
      throw std::invalid_argument("dropout rate must lie in [0, 1)");
  }

  Shape output_shape(const Shape& in) const override { return in; }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng& rng) override {
    const double p = this->spec_.rate;
    if (mode == Mode::inference || p == 0.0) {
      out = in;
      if (mode == Mode::training) mask_.assign(in.shape(), T{1});
      return;
    }
    out.assign(in.shape());
    mask_.assign(in.shape());
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (std::size_t i = 0; i < in.size(); ++i) {
      mask_[i] = rng.uniform() < p ? T{0} : scale;
      out[i] = in[i] * mask_[i];
    }
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    grad_in.assign(mask_.shape());
    for (std::size_t i = 0; i < grad_in.size(); ++i) grad_in[i] = grad_out[i] * mask_[i];
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Dropout>(*this); }

 private:
  Tensor<T> mask_;
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  explicit Flatten(LayerSpec spec) : Layer<T>(spec) {}

  Shape output_shape(const Shape& in) const override { return {in.n, in.c * in.h * in.w, 1, 1}; }

  void forward(const Tensor<T>& in, Tensor<T>& out, Mode mode, Rng&) override {
    out = in;
    out.reshape(output_shape(in.shape()));
    if (mode == Mode::training) in_shape_ = in.shape();
  }

  void backward(const Tensor<T>& grad_out, Tensor<T>& grad_in) override {
    grad_in = grad_out;
    grad_in.reshape(in_shape_);
  }

  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Flatten>(*this); }

 private:
  Shape in_shape_{};
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::conv3x3: return std::make_unique<Conv3x3<T>>(spec);
    case LayerKind::maxpool2x2: return std::make_unique<MaxPool2x2<T>>(spec);
    case LayerKind::dense:
    case LayerKind::linear_output: return std::make_unique<Dense<T>>(spec);
    case LayerKind::activation: return std::make_unique<ActivationLayer<T>>(spec);
    case LayerKind::batchnorm: return std::make_unique<BatchNorm<T>>(spec);
    case LayerKind::dropout: return std::make_unique<Dropout<T>>(spec);
    case LayerKind::flatten: return std::make_unique<Flatten<T>>(spec);
  }
  throw std::invalid_argument("unknown layer kind");
}

}  // namespace tactipose::nn
