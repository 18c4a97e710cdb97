#pragma once

// Shared oracles for the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tactipose/nn/model.hpp"
#include "tactipose/random.hpp"

namespace tptest {

using tactipose::Rng;
using tactipose::nn::Layer;
using tactipose::nn::LayerSpec;
using tactipose::nn::Mode;
using tactipose::nn::Model;
using tactipose::nn::Shape;
using tactipose::nn::Tensor;

inline Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(s);
  Rng rng(seed, 77);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// |a - n| / max(|a|, |n|, floor): relative where gradients are sizeable,
// absolute below the floor.
inline double rel_error(double a, double n, double floor = 1e-4) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Checks one layer's input and parameter gradients against central finite
/// differences of L = <r, layer(x)> with a fixed random projection r.
/// Dropout masks are held fixed by reseeding the layer stream for every pass.
inline double layer_gradient_error(const LayerSpec& spec, Shape in_shape, std::uint64_t seed,
                                   double eps = 1e-6) {
  auto layer = tactipose::nn::make_layer<double>(spec);
  Rng init(seed, 1);
  Shape per = in_shape;
  per.n = 1;
  layer->initialize(per, init);
  // Non-trivial affine parameters for batchnorm etc.
  for (auto* p : layer->parameters()) {
    Rng r(seed, 2);
    for (auto& v : p->value.values()) v += r.uniform(-0.5, 0.5);
  }
  Tensor<double> x = random_tensor(in_shape, seed);
  auto run = [&](const Tensor<double>& in) {
    Rng rng(seed, 3);
    Tensor<double> out;
    layer->forward(in, out, Mode::training, rng);
    return out;
  };
  const Tensor<double> y = run(x);
  const Tensor<double> r = random_tensor(y.shape(), seed + 1);
  auto loss = [&](const Tensor<double>& in) { return dot(r, run(in)); };

  for (auto* p : layer->parameters()) p->grad.assign(p->value.shape());
  run(x);
  Tensor<double> gin;
  layer->backward(r, gin);

  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> xp = x, xm = x;
    xp[i] += eps;
    xm[i] -= eps;
    const double num = (loss(xp) - loss(xm)) / (2 * eps);
    worst = std::max(worst, rel_error(gin[i], num));
  }
  for (auto* p : layer->parameters()) {
    const Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double w = p->value[i];
      p->value[i] = w + eps;
      const double lp = loss(x);
      p->value[i] = w - eps;
      const double lm = loss(x);
      p->value[i] = w;
      worst = std::max(worst, rel_error(analytic[i], (lp - lm) / (2 * eps)));
    }
  }
  return worst;
}

/// Parameter-gradient check of a whole model (training mode, fixed dropout
/// stream) for L = <r, model(x)>.
inline double model_gradient_error(Model<double>& model, const Tensor<double>& x,
                                   std::uint64_t seed, double eps = 1e-6) {
  auto run = [&] {
    model.seed(seed);
    return model.forward(x, Mode::training);
  };
  const Tensor<double> r = random_tensor(run().shape(), seed + 9);
  run();
  model.backward(r);
  double worst = 0.0;
  for (auto* p : model.parameters()) {
    const Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double w = p->value[i];
      p->value[i] = w + eps;
      const double lp = dot(r, run());
      p->value[i] = w - eps;
      const double lm = dot(r, run());
      p->value[i] = w;
      worst = std::max(worst, rel_error(analytic[i], (lp - lm) / (2 * eps)));
    }
  }
  return worst;
}

/// One-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> xs, const std::function<double(double)>& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tactipose_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace tptest
