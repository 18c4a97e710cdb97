#pragma once

// Hyperparameter search over pose networks: search spaces, point <->
// Hyperparams conversion and the validation-loss objective.

#include <string>
#include <vector>

#include "json.hpp"
#include "tactipose/posenet.hpp"
#include "tactipose/tpe.hpp"

namespace tactipose {

namespace detail {

inline std::vector<nlohmann::json> int_choices(std::initializer_list<int> v) {
  return {v.begin(), v.end()};
}

inline std::vector<nlohmann::json> powers_of_two(int lo, int hi) {
  std::vector<nlohmann::json> out;
  for (int v = lo; v <= hi; v *= 2) out.emplace_back(v);
  return out;
}

}  // namespace detail

/// Full search space: the complete hyperparameter grid plus the
/// batch-normalisation switch.
inline tpe::SearchSpace full_search_space() {
  using tpe::Dimension;
  return {{Dimension::ordinal("n_conv", detail::int_choices({1, 2, 3, 4, 5})),
           Dimension::ordinal("n_filters", detail::powers_of_two(2, 512)),
           Dimension::ordinal("n_dense", detail::int_choices({1, 2, 3, 4, 5})),
           Dimension::ordinal("n_units", detail::powers_of_two(2, 512)),
           Dimension::categorical("activation", {"relu", "elu"}),
           Dimension::uniform("dropout", 0.0, 0.5),
           Dimension::log_uniform("l1", 1e-4, 1e-1),
           Dimension::log_uniform("l2", 1e-4, 1e-1),
           Dimension::ordinal("batch_size", detail::int_choices({16, 32, 64, 128})),
           Dimension::categorical("batchnorm", {false, true})}};
}

/// Desk-scale space: same dimensions and distributions, with network width
/// and depth capped so a trial trains in seconds on one CPU core.
inline tpe::SearchSpace small_search_space() {
  auto s = full_search_space();
  s.dims[0].choices = detail::int_choices({1, 2, 3, 4});
  s.dims[1].choices = detail::powers_of_two(2, 16);
  s.dims[2].choices = detail::int_choices({1, 2});
  s.dims[3].choices = detail::powers_of_two(2, 64);
  return s;
}

inline Hyperparams to_hyperparams(const tpe::SearchSpace& space, const tpe::Point& p) {
  return space.to_json(p).get<Hyperparams>();
}

inline tpe::Point to_point(const tpe::SearchSpace& space, const Hyperparams& hp) {
  auto j = nlohmann::json(hp);
  nlohmann::json sub = nlohmann::json::object();
  for (const auto& d : space.dims) sub[d.name] = j.at(d.name);
  return space.from_json(sub);
}

/// Validation loss of a network trained with the hyperparameters at `p`.
/// Infeasible architectures and divergent runs propagate as exceptions,
/// which the optimiser records as failed trials.
template <typename T = float>
tpe::Objective posenet_objective(const tpe::SearchSpace& space, const Dataset& train_set,
                                 const Dataset& val_set, std::uint64_t seed, FitOptions opts) {
  return [&space, &train_set, &val_set, seed, opts](const tpe::Point& p) {
    return fit<T>(to_hyperparams(space, p), train_set, val_set, seed, opts).best_val_loss;
  };
}

}  // namespace tactipose
