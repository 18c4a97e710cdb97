#pragma once

// Sequential model-based optimisation with a Tree-structured Parzen Estimator.
//
// Points are stored in "internal" coordinates: the choice index for
// categorical/ordinal dimensions and the raw value for continuous ones.
// Log-uniform dimensions are modelled in log space.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "tactipose/random.hpp"

namespace tactipose::tpe {

enum class DimKind { categorical, ordinal, uniform, log_uniform };

inline std::string_view to_string(DimKind k) {
  switch (k) {
    case DimKind::categorical: return "categorical";
    case DimKind::ordinal: return "ordinal";
    case DimKind::uniform: return "uniform";
    case DimKind::log_uniform: return "log_uniform";
  }
  return "?";
}

struct Dimension {
  std::string name;
  DimKind kind = DimKind::uniform;
  std::vector<nlohmann::json> choices;  // categorical / ordinal
  double lo = 0.0, hi = 1.0;            // continuous

  static Dimension categorical(std::string name, std::vector<nlohmann::json> choices) {
    return {std::move(name), DimKind::categorical, std::move(choices)};
  }
  static Dimension ordinal(std::string name, std::vector<nlohmann::json> choices) {
    return {std::move(name), DimKind::ordinal, std::move(choices)};
  }
  static Dimension uniform(std::string name, double lo, double hi) {
    return {std::move(name), DimKind::uniform, {}, lo, hi};
  }
  static Dimension log_uniform(std::string name, double lo, double hi) {
    return {std::move(name), DimKind::log_uniform, {}, lo, hi};
  }

  bool discrete() const { return kind == DimKind::categorical || kind == DimKind::ordinal; }
  bool is_log() const { return kind == DimKind::log_uniform; }
  // Bounds of the space the Parzen estimator works in.
  double model_lo() const { return is_log() ? std::log(lo) : lo; }
  double model_hi() const { return is_log() ? std::log(hi) : hi; }
};

using Point = std::vector<double>;

struct SearchSpace {
  std::vector<Dimension> dims;

  void validate() const {
    if (dims.empty()) throw std::invalid_argument("search space has no dimensions");
    for (const auto& d : dims) {
      if (d.discrete()) {
        if (d.choices.empty())
          throw std::invalid_argument("dimension '" + d.name + "' has no choices");
      } else {
        if (!(d.lo < d.hi)) throw std::invalid_argument("dimension '" + d.name + "' needs lo < hi");
        if (d.is_log() && d.lo <= 0.0)
          throw std::invalid_argument("log-uniform dimension '" + d.name + "' needs lo > 0");
      }
    }
  }

  std::size_t size() const { return dims.size(); }

  bool contains(const Point& p) const {
    if (p.size() != dims.size()) return false;
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const auto& d = dims[i];
      if (d.discrete()) {
        if (p[i] < 0 || p[i] != std::floor(p[i]) || p[i] >= static_cast<double>(d.choices.size()))
          return false;
      } else if (!(p[i] >= d.lo && p[i] <= d.hi)) {
        return false;
      }
    }
    return true;
  }

  /// {name: value} with categorical/ordinal indices replaced by their choice.
  nlohmann::json to_json(const Point& p) const {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const auto& d = dims[i];
      j[d.name] = d.discrete() ? d.choices.at(static_cast<std::size_t>(p[i])) : nlohmann::json(p[i]);
    }
    return j;
  }

  Point from_json(const nlohmann::json& j) const {
    Point p(dims.size());
    for (std::size_t i = 0; i < dims.size(); ++i) {
      const auto& d = dims[i];
      if (!j.contains(d.name)) throw std::invalid_argument("point is missing '" + d.name + "'");
      const auto& v = j.at(d.name);
      if (d.discrete()) {
        const auto it = std::find(d.choices.begin(), d.choices.end(), v);
        if (it == d.choices.end())
          throw std::invalid_argument("value " + v.dump() + " is not a choice of '" + d.name + "'");
        p[i] = static_cast<double>(it - d.choices.begin());
      } else {
        if (!v.is_number()) throw std::invalid_argument("'" + d.name + "' must be a number");
        p[i] = v.get<double>();
      }
    }
    if (!contains(p)) throw std::invalid_argument("point lies outside the search space");
    return p;
  }
};

struct Trial {
  std::size_t index = 0;
  Point point;
  std::optional<double> loss;  // empty when the objective failed
  std::string provenance;      // "startup" or "tpe"
  double wall_time = 0.0;      // seconds
  std::string error;

  bool failed() const { return !loss.has_value(); }
};

struct TpeConfig {
  std::size_t n_trials = 300;
  std::size_t n_startup = 50;
  double gamma = 0.25;
  std::size_t n_candidates = 24;
  std::uint64_t seed = 0;

  // n_startup == n_trials is allowed and yields plain random search.
  void validate() const {
    if (n_trials < 1) throw std::invalid_argument("n_trials must be positive");
    if (n_startup > n_trials) throw std::invalid_argument("n_startup must not exceed n_trials");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (n_candidates < 1) throw std::invalid_argument("n_candidates must be at least 1");
  }
};

inline Point sample_uniform(const SearchSpace& space, Rng& rng) {
  Point p(space.size());
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& d = space.dims[i];
    switch (d.kind) {
      case DimKind::categorical:
      case DimKind::ordinal: p[i] = static_cast<double>(rng.below(d.choices.size())); break;
      case DimKind::uniform: p[i] = rng.uniform(d.lo, d.hi); break;
      case DimKind::log_uniform:
        p[i] = std::clamp(std::exp(rng.uniform(std::log(d.lo), std::log(d.hi))), d.lo, d.hi);
        break;
    }
  }
  return p;
}

class NoSuccessfulTrial : public std::runtime_error {
 public:
  NoSuccessfulTrial() : std::runtime_error("no successful trial") {}
};

struct HistorySplit {
  std::vector<std::size_t> good;  // positions in the trial vector
  std::vector<std::size_t> bad;
  double failure_penalty = 0.0;
};

/// Ranks trials by (failed, loss, index); the first ceil(gamma * n) finite
/// trials (at least one) are "good". Failed trials always land in "bad" with
/// loss 10 x the largest finite loss.
inline HistorySplit split_history(const std::vector<Trial>& trials, double gamma) {
  std::vector<std::size_t> finite;
  double worst = 0.0;
  for (std::size_t i = 0; i < trials.size(); ++i)
    if (!trials[i].failed()) {
      finite.push_back(i);
      worst = std::max(worst, *trials[i].loss);
    }
  if (finite.empty()) throw NoSuccessfulTrial();
  HistorySplit s;
  s.failure_penalty = 10.0 * worst;
  std::vector<std::size_t> order(trials.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& ta = trials[a];
    const auto& tb = trials[b];
    if (ta.failed() != tb.failed()) return tb.failed();
    if (!ta.failed() && *ta.loss != *tb.loss) return *ta.loss < *tb.loss;
    return ta.index < tb.index;
  });
  const auto n = static_cast<double>(trials.size());
  auto n_good = static_cast<std::size_t>(std::ceil(gamma * n - 1e-12));
  n_good = std::clamp<std::size_t>(n_good, 1, finite.size());
  s.good.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_good));
  s.bad.assign(order.begin() + static_cast<std::ptrdiff_t>(n_good), order.end());
  return s;
}

/// Mixture of Gaussians truncated to [lo, hi]: one kernel per observation
/// plus a prior kernel at the midpoint with bandwidth equal to the range.
class ParzenContinuous {
 public:
  ParzenContinuous(std::vector<double> obs, double lo, double hi) : lo_(lo), hi_(hi) {
    const double range = hi - lo;
    std::sort(obs.begin(), obs.end());
    const auto n = obs.size();
    const double min_bw = n ? range / static_cast<double>(n) : range;
    for (std::size_t i = 0; i < n; ++i) {
      const double left = i > 0 ? obs[i] - obs[i - 1] : obs[i] - lo;
      const double right = i + 1 < n ? obs[i + 1] - obs[i] : hi - obs[i];
      add(obs[i], std::clamp(std::max(left, right), min_bw, range));
    }
    add(0.5 * (lo + hi), range);
  }

  double pdf(double x) const {
    if (x < lo_ || x > hi_) return 0.0;
    double p = 0.0;
    for (std::size_t k = 0; k < mu_.size(); ++k) {
      const double z = (x - mu_[k]) / sigma_[k];
      p += std::exp(-0.5 * z * z) / (sigma_[k] * std::sqrt(2.0 * std::numbers::pi) * mass_[k]);
    }
    return p / static_cast<double>(mu_.size());
  }

  double sample(Rng& rng) const {
    const auto k = rng.below(mu_.size());
    for (int attempt = 0; attempt < 64; ++attempt) {
      const double x = mu_[k] + sigma_[k] * rng.normal();
      if (x >= lo_ && x <= hi_) return x;
    }
    return std::clamp(mu_[k], lo_, hi_);
  }

  const std::vector<double>& means() const { return mu_; }
  const std::vector<double>& bandwidths() const { return sigma_; }

 private:
  static double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

  void add(double mu, double sigma) {
    mu_.push_back(mu);
    sigma_.push_back(sigma);
    mass_.push_back(std::max(phi((hi_ - mu) / sigma) - phi((lo_ - mu) / sigma), 1e-300));
  }

  double lo_, hi_;
  std::vector<double> mu_, sigma_, mass_;
};

/// Add-one smoothed frequencies over the choice indices.
class ParzenCategorical {
 public:
  ParzenCategorical(const std::vector<double>& obs, std::size_t n_choices)
      : p_(n_choices, 1.0) {
    for (double v : obs) p_[static_cast<std::size_t>(v)] += 1.0;
    const double total = static_cast<double>(obs.size() + n_choices);
    for (auto& v : p_) v /= total;
  }

  double pmf(std::size_t k) const { return k < p_.size() ? p_[k] : 0.0; }
  const std::vector<double>& probabilities() const { return p_; }

  std::size_t sample(Rng& rng) const {
    double u = rng.uniform();
    for (std::size_t k = 0; k + 1 < p_.size(); ++k) {
      if (u < p_[k]) return k;
      u -= p_[k];
    }
    return p_.size() - 1;
  }

 private:
  std::vector<double> p_;
};

/// Per-dimension l (good) and g (bad) densities.
class TpeModel {
 public:
  TpeModel(const SearchSpace& space, const std::vector<Trial>& trials, double gamma)
      : space_(&space) {
    const auto split = split_history(trials, gamma);
    for (std::size_t i = 0; i < space.size(); ++i) {
      const auto& d = space.dims[i];
      auto coords = [&](const std::vector<std::size_t>& idx) {
        std::vector<double> v;
        for (auto t : idx) v.push_back(d.is_log() ? std::log(trials[t].point[i]) : trials[t].point[i]);
        return v;
      };
      if (d.discrete()) {
        cat_l_.emplace_back(coords(split.good), d.choices.size());
        cat_g_.emplace_back(coords(split.bad), d.choices.size());
      } else {
        cont_l_.emplace_back(coords(split.good), d.model_lo(), d.model_hi());
        cont_g_.emplace_back(coords(split.bad), d.model_lo(), d.model_hi());
      }
    }
  }

  Point sample_good(Rng& rng) const {
    Point p(space_->size());
    std::size_t ci = 0, ki = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& d = space_->dims[i];
      if (d.discrete()) {
        p[i] = static_cast<double>(cat_l_[ki++].sample(rng));
      } else {
        const double x = cont_l_[ci++].sample(rng);
        p[i] = d.is_log() ? std::clamp(std::exp(x), d.lo, d.hi) : x;
      }
    }
    return p;
  }

  /// sum over dimensions of log l(x) - log g(x).
  double log_ratio(const Point& p) const {
    double s = 0.0;
    std::size_t ci = 0, ki = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const auto& d = space_->dims[i];
      if (d.discrete()) {
        const auto k = static_cast<std::size_t>(p[i]);
        s += std::log(cat_l_[ki].pmf(k)) - std::log(cat_g_[ki].pmf(k));
        ++ki;
      } else {
        const double x = d.is_log() ? std::log(p[i]) : p[i];
        s += std::log(std::max(cont_l_[ci].pdf(x), 1e-300)) -
             std::log(std::max(cont_g_[ci].pdf(x), 1e-300));
        ++ci;
      }
    }
    return s;
  }

 private:
  const SearchSpace* space_;
  std::vector<ParzenContinuous> cont_l_, cont_g_;
  std::vector<ParzenCategorical> cat_l_, cat_g_;
};

inline std::size_t count_finite(const std::vector<Trial>& trials) {
  return static_cast<std::size_t>(
      std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return !t.failed(); }));
}

/// Next point to evaluate. Uniform while fewer than n_startup trials are
/// complete (or fewer than two have finite losses); otherwise the best of
/// n_candidates draws from l by the joint l/g ratio.
inline Point suggest(const std::vector<Trial>& trials, const SearchSpace& space,
                     const TpeConfig& cfg, Rng& rng, bool* used_model = nullptr) {
  if (used_model) *used_model = false;
  if (trials.size() < cfg.n_startup || count_finite(trials) < 2) return sample_uniform(space, rng);
  const TpeModel model(space, trials, cfg.gamma);
  Point best;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < cfg.n_candidates; ++c) {
    auto p = model.sample_good(rng);
    const double score = model.log_ratio(p);
    if (best.empty() || score > best_score) {
      best = std::move(p);
      best_score = score;
    }
  }
  if (used_model) *used_model = true;
  return best;
}

// ---------------------------------------------------------------------------
// Trial log: one JSON object per line.

inline nlohmann::json trial_to_json(const SearchSpace& space, const Trial& t) {
  nlohmann::json j = {{"index", t.index},
                      {"params", space.to_json(t.point)},
                      {"loss", t.loss ? nlohmann::json(*t.loss) : nlohmann::json(nullptr)},
                      {"status", t.failed() ? "failed" : "ok"},
                      {"provenance", t.provenance},
                      {"wall_time", t.wall_time}};
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

inline Trial trial_from_json(const SearchSpace& space, const nlohmann::json& j) {
  Trial t;
  t.index = j.at("index").get<std::size_t>();
  t.point = space.from_json(j.at("params"));
  if (!j.at("loss").is_null()) t.loss = j.at("loss").get<double>();
  t.provenance = j.value("provenance", std::string());
  t.wall_time = j.value("wall_time", 0.0);
  t.error = j.value("error", std::string());
  return t;
}

class TrialLogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<Trial> read_trial_log(const std::filesystem::path& path, const SearchSpace& space) {
  std::ifstream in(path);
  if (!in) throw TrialLogError("cannot open trial log " + path.string());
  std::vector<Trial> trials;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto t = trial_from_json(space, nlohmann::json::parse(line));
      if (t.index != trials.size())
        throw std::invalid_argument("expected trial index " + std::to_string(trials.size()));
      trials.push_back(std::move(t));
    } catch (const std::exception& e) {
      throw TrialLogError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trials;
}

struct OptimizeResult {
  Trial best;
  std::vector<Trial> history;
};

/// Objective: returns a loss; throwing or returning a non-finite value
/// marks the trial as failed.
using Objective = std::function<double(const Point&)>;

struct OptimizeOptions {
  std::filesystem::path log_path;  // empty: no log
  bool resume = false;             // continue from an existing log
  std::function<void(const Trial&)> on_trial;
};

inline const Trial& best_trial(const std::vector<Trial>& trials) {
  const Trial* best = nullptr;
  for (const auto& t : trials)
    if (!t.failed() && (!best || *t.loss < *best->loss)) best = &t;
  if (!best) throw NoSuccessfulTrial();
  return *best;
}

/// Best finite loss after each trial (infinity before the first success).
inline std::vector<double> best_so_far(const std::vector<Trial>& trials) {
  std::vector<double> out;
  double b = std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    if (!t.failed()) b = std::min(b, *t.loss);
    out.push_back(b);
  }
  return out;
}

/// Evaluates exactly cfg.n_trials points. Trial i draws from Rng(seed, i), so
/// a resumed run reproduces an uninterrupted one.
inline OptimizeResult optimize(const Objective& objective, const SearchSpace& space,
                               const TpeConfig& cfg, const OptimizeOptions& opts = {}) {
  space.validate();
  cfg.validate();
  std::vector<Trial> history;
  if (opts.resume && !opts.log_path.empty() && std::filesystem::exists(opts.log_path)) {
    history = read_trial_log(opts.log_path, space);
    if (history.size() > cfg.n_trials)
      throw TrialLogError(opts.log_path.string() + " holds more trials than requested");
  }
  std::ofstream log;
  if (!opts.log_path.empty()) {
    log.open(opts.log_path, opts.resume ? std::ios::app : std::ios::trunc);
    if (!log) throw TrialLogError("cannot write trial log " + opts.log_path.string());
  }
  while (history.size() < cfg.n_trials) {
    Trial t;
    t.index = history.size();
    Rng rng(cfg.seed, t.index);
    bool modelled = false;
    t.point = suggest(history, space, cfg, rng, &modelled);
    t.provenance = modelled ? "tpe" : "startup";
    const auto start = std::chrono::steady_clock::now();
    try {
      const double loss = objective(t.point);
      if (std::isfinite(loss) && loss >= 0.0)
        t.loss = loss;
      else
        t.error = "objective returned " + std::to_string(loss);
    } catch (const std::exception& e) {
      t.error = e.what();
    }
    t.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (log) {
      log << trial_to_json(space, t).dump() << '\n';
      log.flush();
    }
    history.push_back(std::move(t));
    if (opts.on_trial) opts.on_trial(history.back());
  }
  return {best_trial(history), std::move(history)};
}

}  // namespace tactipose::tpe
