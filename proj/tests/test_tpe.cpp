#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "tactipose/hpo.hpp"
#include "tactipose/tpe.hpp"

using namespace tactipose;
using namespace tactipose::tpe;

namespace {

SearchSpace unit_square() {
  return {{Dimension::uniform("x", 0, 1), Dimension::uniform("y", 0, 1)}};
}

double quadratic(const Point& p) {
  return (p[0] - 0.3) * (p[0] - 0.3) + (p[1] - 0.7) * (p[1] - 0.7);
}

Trial make_trial(std::size_t i, Point p, std::optional<double> loss) {
  Trial t;
  t.index = i;
  t.point = std::move(p);
  t.loss = loss;
  return t;
}

std::vector<std::size_t> indices(const std::vector<Trial>& trials, const std::vector<std::size_t>& pos) {
  std::vector<std::size_t> out;
  for (auto p : pos) out.push_back(trials[p].index);
  std::sort(out.begin(), out.end());
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST(SearchSpace, Validation) {
  EXPECT_THROW(SearchSpace{}.validate(), std::invalid_argument);
  EXPECT_THROW((SearchSpace{{Dimension::uniform("a", 1, 1)}}).validate(), std::invalid_argument);
  EXPECT_THROW((SearchSpace{{Dimension::log_uniform("a", 0, 1)}}).validate(), std::invalid_argument);
  EXPECT_THROW((SearchSpace{{Dimension::categorical("a", {})}}).validate(), std::invalid_argument);
  EXPECT_NO_THROW(full_search_space().validate());
  EXPECT_NO_THROW(small_search_space().validate());
}

TEST(SearchSpace, JsonConversion) {
  const auto s = full_search_space();
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const auto p = sample_uniform(s, rng);
    EXPECT_EQ(s.from_json(s.to_json(p)), p);
  }
  auto j = s.to_json(sample_uniform(s, rng));
  j["n_filters"] = 3;
  EXPECT_THROW(s.from_json(j), std::invalid_argument);
  j["n_filters"] = 4;
  j["dropout"] = 0.9;
  EXPECT_THROW(s.from_json(j), std::invalid_argument);
  j.erase("dropout");
  EXPECT_THROW(s.from_json(j), std::invalid_argument);
}

TEST(SearchSpace, FullSpaceMatchesReferenceRanges) {
  const auto s = full_search_space();
  auto dim = [&](const std::string& n) {
    return *std::find_if(s.dims.begin(), s.dims.end(), [&](const Dimension& d) { return d.name == n; });
  };
  std::vector<nlohmann::json> pow2;
  for (int v = 2; v <= 512; v *= 2) pow2.emplace_back(v);
  EXPECT_EQ(dim("n_filters").choices, pow2);
  EXPECT_EQ(dim("n_units").choices, pow2);
  EXPECT_EQ(dim("n_conv").choices.size(), 5u);
  EXPECT_EQ(dim("n_dense").choices.size(), 5u);
  EXPECT_EQ(dim("batch_size").choices, (std::vector<nlohmann::json>{16, 32, 64, 128}));
  EXPECT_EQ(dim("dropout").kind, DimKind::uniform);
  EXPECT_EQ(dim("dropout").hi, 0.5);
  for (const char* n : {"l1", "l2"}) {
    EXPECT_EQ(dim(n).kind, DimKind::log_uniform);
    EXPECT_EQ(dim(n).lo, 1e-4);
    EXPECT_EQ(dim(n).hi, 1e-1);
  }
  EXPECT_EQ(dim("activation").choices, (std::vector<nlohmann::json>{"relu", "elu"}));
  EXPECT_EQ(dim("batchnorm").choices.size(), 2u);
}

TEST(SearchSpace, HyperparamConversionRoundTrip) {
  const auto s = full_search_space();
  const auto hp = Hyperparams::edge_optimum();
  EXPECT_EQ(to_hyperparams(s, to_point(s, hp)), hp);
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const auto p = sample_uniform(s, rng);
    EXPECT_EQ(to_point(s, to_hyperparams(s, p)), p);
  }
}

TEST(SampleUniform, LogUniformMedian) {
  const SearchSpace s{{Dimension::log_uniform("l", 1e-4, 1e-1)}};
  Rng rng(5);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) xs.push_back(sample_uniform(s, rng)[0]);
  const double m = median(xs);
  EXPECT_GE(m, 2.5e-3);
  EXPECT_LE(m, 4.5e-3);
  // log10 of the draws is uniform on [-4, -1] (KS at the 0.1% level).
  for (auto& x : xs) x = std::log10(x);
  EXPECT_LT(tptest::ks_statistic(xs, [](double v) { return (v + 4.0) / 3.0; }), 1.949 / 100.0);
}

TEST(SampleUniform, DiscreteChoices) {
  const SearchSpace one{{Dimension::categorical("a", {"only"})}};
  const auto ord = full_search_space();
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_EQ(one.to_json(sample_uniform(one, rng)).at("a"), "only");
    const auto p = sample_uniform(ord, rng);
    EXPECT_TRUE(ord.contains(p));
    const int f = ord.to_json(p).at("n_filters").get<int>();
    EXPECT_EQ(f & (f - 1), 0);
  }
}

TEST(SplitHistory, QuantileArithmetic) {
  std::vector<Trial> t;
  for (std::size_t i = 0; i < 4; ++i) t.push_back(make_trial(i, {0.5}, 4.0 - static_cast<double>(i)));
  const auto s = split_history(t, 0.25);
  EXPECT_EQ(indices(t, s.good), (std::vector<std::size_t>{3}));
  EXPECT_EQ(indices(t, s.bad), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SplitHistory, TiesBreakByIndex) {
  std::vector<Trial> t;
  for (std::size_t i = 0; i < 10; ++i) t.push_back(make_trial(i, {0.5}, 1.0));
  const auto s = split_history(t, 0.25);
  EXPECT_EQ(indices(t, s.good), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(SplitHistory, FailuresAreBadWithPenalty) {
  std::vector<Trial> t{make_trial(0, {0.1}, std::nullopt), make_trial(1, {0.2}, 2.0),
                       make_trial(2, {0.3}, 5.0), make_trial(3, {0.4}, std::nullopt)};
  const auto s = split_history(t, 0.5);
  EXPECT_EQ(indices(t, s.good), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(indices(t, s.bad), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(s.failure_penalty, 50.0);
  // Never more good trials than finite ones.
  const auto s2 = split_history(t, 0.9);
  EXPECT_EQ(s2.good.size(), 2u);
  std::vector<Trial> dead{make_trial(0, {0.1}, std::nullopt)};
  EXPECT_THROW(split_history(dead, 0.25), NoSuccessfulTrial);
}

TEST(Parzen, ContinuousDensityIntegratesToOne) {
  Rng rng(8);
  for (int c = 0; c < 20; ++c) {
    const double lo = rng.uniform(-5, 0), hi = lo + rng.uniform(0.5, 10);
    std::vector<double> obs;
    const auto n = rng.below(12);
    for (std::uint64_t i = 0; i < n; ++i) obs.push_back(rng.uniform(lo, hi));
    const ParzenContinuous p(obs, lo, hi);
    // Composite Simpson on a fine grid.
    const int m = 200000;
    const double h = (hi - lo) / m;
    double s = p.pdf(lo) + p.pdf(hi);
    for (int k = 1; k < m; ++k) s += (k % 2 ? 4.0 : 2.0) * p.pdf(lo + k * h);
    EXPECT_NEAR(s * h / 3.0, 1.0, 1e-6) << "case " << c;
    EXPECT_EQ(p.pdf(lo - 1e-9), 0.0);
  }
}

TEST(Parzen, BandwidthRule) {
  const ParzenContinuous p({0.2, 0.25, 0.9}, 0.0, 1.0);
  // Sorted obs: 0.2 (gaps 0.2, 0.05), 0.25 (0.05, 0.65), 0.9 (0.65, 0.1); prior last.
  EXPECT_EQ(p.means(), (std::vector<double>{0.2, 0.25, 0.9, 0.5}));
  EXPECT_NEAR(p.bandwidths()[0], 1.0 / 3.0, 1e-15);  // max gap 0.2 < range / n
  EXPECT_NEAR(p.bandwidths()[1], 0.65, 1e-15);
  EXPECT_NEAR(p.bandwidths()[2], 0.65, 1e-15);
  EXPECT_EQ(p.bandwidths()[3], 1.0);
}

TEST(Parzen, SamplesStayInBounds) {
  const ParzenContinuous p({0.01, 0.02}, 0.0, 0.05);
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double x = p.sample(rng);
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 0.05);
  }
}

TEST(Parzen, CategoricalSmoothing) {
  const ParzenCategorical c({0, 0, 0, 2}, 3);
  EXPECT_DOUBLE_EQ(c.pmf(0), 4.0 / 7);
  EXPECT_DOUBLE_EQ(c.pmf(1), 1.0 / 7);
  EXPECT_DOUBLE_EQ(c.pmf(2), 2.0 / 7);
  double s = 0;
  for (double v : c.probabilities()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(Suggest, EmptyHistoryIsUniformDraw) {
  const auto s = full_search_space();
  TpeConfig cfg;
  Rng a(4), b(4);
  bool used = true;
  EXPECT_EQ(suggest({}, s, cfg, a, &used), sample_uniform(s, b));
  EXPECT_FALSE(used);
}

TEST(Suggest, FollowsGoodCluster) {
  const SearchSpace s{{Dimension::uniform("x", 0, 1)}};
  TpeConfig cfg;
  cfg.n_startup = 5;
  Rng noise(3);
  std::vector<Trial> hist;
  for (std::size_t i = 0; i < 20; ++i) {
    const bool good = i % 4 == 0;
    const double x = (good ? 0.1 : 0.9) + noise.uniform(-0.03, 0.03);
    hist.push_back(make_trial(i, {x}, good ? 0.01 : 1.0));
  }
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed, 17);
    bool used = false;
    const auto p = suggest(hist, s, cfg, rng, &used);
    EXPECT_TRUE(used);
    hits += p[0] >= 0.0 && p[0] <= 0.5;
  }
  EXPECT_GE(hits, 95);
}

TEST(Suggest, PrefersCategoryOfGoodTrials) {
  const SearchSpace s{{Dimension::categorical("activation", {"relu", "elu"})}};
  std::vector<Trial> hist;
  for (std::size_t i = 0; i < 12; ++i) {
    const bool good = i < 3;
    hist.push_back(make_trial(i, {good ? 0.0 : static_cast<double>(i % 2)}, good ? 0.1 : 1.0 + i));
  }
  const TpeModel m(s, hist, 0.25);
  EXPECT_GT(m.log_ratio({0.0}), m.log_ratio({1.0}));
}

TEST(Suggest, AlwaysInsideTheSpace) {
  const auto s = full_search_space();
  TpeConfig cfg;
  cfg.n_startup = 3;
  int total = 0;
  for (std::uint64_t h = 0; h < 50; ++h) {
    Rng hr(h, 1);
    std::vector<Trial> hist;
    const auto n = 3 + hr.below(30);
    for (std::size_t i = 0; i < n; ++i) {
      std::optional<double> loss;
      if (hr.uniform() > 0.1) loss = hr.uniform(0, 10);
      hist.push_back(make_trial(i, sample_uniform(s, hr), loss));
    }
    if (count_finite(hist) == 0) hist[0].loss = 1.0;
    for (std::uint64_t k = 0; k < 200; ++k, ++total) {
      Rng rng(h, 1000 + k);
      EXPECT_TRUE(s.contains(suggest(hist, s, cfg, rng)));
    }
  }
  EXPECT_EQ(total, 10000);
}

TEST(Optimize, ConstantObjective) {
  TpeConfig cfg;
  cfg.n_trials = 25;
  cfg.n_startup = 5;
  const auto r = optimize([](const Point&) { return 2.5; }, unit_square(), cfg);
  EXPECT_EQ(r.history.size(), 25u);
  EXPECT_EQ(*r.best.loss, 2.5);
  EXPECT_EQ(r.best.index, 0u);
  for (std::size_t i = 0; i < r.history.size(); ++i) {
    EXPECT_EQ(r.history[i].index, i);
    EXPECT_EQ(r.history[i].provenance, i < 5 ? "startup" : "tpe");
  }
}

TEST(Optimize, QuadraticConvergesAndBeatsRandom) {
  std::vector<double> tpe_best, rnd_best;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TpeConfig cfg;
    cfg.n_trials = 60;
    cfg.n_startup = 20;
    cfg.seed = seed;
    tpe_best.push_back(*optimize(quadratic, unit_square(), cfg).best.loss);
    cfg.n_startup = 60;
    rnd_best.push_back(*optimize(quadratic, unit_square(), cfg).best.loss);
  }
  EXPECT_LT(median(tpe_best), 0.01);
  EXPECT_LE(median(tpe_best), median(rnd_best));
}

TEST(Optimize, AllStartupIsSeededRandomSearch) {
  const auto s = full_search_space();
  TpeConfig cfg;
  cfg.n_trials = 30;
  cfg.n_startup = 30;
  cfg.seed = 77;
  auto obj = [](const Point& p) { return p[5] + p[6]; };
  const auto r = optimize(obj, s, cfg);
  for (std::size_t i = 0; i < 30; ++i) {
    Rng rng(77, i);
    EXPECT_EQ(r.history[i].point, sample_uniform(s, rng));
    EXPECT_EQ(r.history[i].provenance, "startup");
  }
}

TEST(Optimize, BestSoFarIsMonotone) {
  TpeConfig cfg;
  cfg.n_trials = 40;
  cfg.n_startup = 10;
  cfg.seed = 3;
  const auto r = optimize(quadratic, unit_square(), cfg);
  const auto b = best_so_far(r.history);
  for (std::size_t i = 1; i < b.size(); ++i) EXPECT_LE(b[i], b[i - 1]);
  EXPECT_EQ(b.back(), *r.best.loss);
}

TEST(Optimize, FailuresAreRecordedAndAvoided) {
  TpeConfig cfg;
  cfg.n_trials = 60;
  cfg.n_startup = 20;
  cfg.seed = 2;
  auto obj = [](const Point& p) -> double {
    if (p[0] > 0.6) throw std::runtime_error("diverged");
    if (p[1] < 0.1) return std::nan("");
    return quadratic(p);
  };
  const auto r = optimize(obj, unit_square(), cfg);
  std::size_t early = 0, late = 0;
  for (const auto& t : r.history) {
    if (!t.failed()) continue;
    EXPECT_FALSE(t.error.empty());
    (t.index < 30 ? early : late) += 1;
  }
  EXPECT_GT(early, 0u);
  EXPECT_LE(late, early);
  EXPECT_FALSE(r.best.failed());
  EXPECT_THROW(optimize([](const Point&) -> double { throw std::runtime_error("x"); }, unit_square(), cfg),
               NoSuccessfulTrial);
}

TEST(Optimize, DeterministicGivenSeed) {
  TpeConfig cfg;
  cfg.n_trials = 30;
  cfg.n_startup = 10;
  cfg.seed = 9;
  const auto a = optimize(quadratic, unit_square(), cfg);
  const auto b = optimize(quadratic, unit_square(), cfg);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(a.history[i].point, b.history[i].point);
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
  }
}

TEST(TrialLog, FieldsAndResume) {
  const auto dir = tptest::scratch_dir("tpe_log");
  const auto space = unit_square();
  TpeConfig cfg;
  cfg.n_trials = 25;
  cfg.n_startup = 8;
  cfg.seed = 4;
  OptimizeOptions full;
  full.log_path = dir / "full.jsonl";
  const auto ref = optimize(quadratic, space, cfg, full);

  // Interrupted run: 12 trials, then resumed to 25.
  OptimizeOptions part;
  part.log_path = dir / "part.jsonl";
  auto short_cfg = cfg;
  short_cfg.n_trials = 12;
  optimize(quadratic, space, short_cfg, part);
  part.resume = true;
  const auto resumed = optimize(quadratic, space, cfg, part);
  ASSERT_EQ(resumed.history.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_EQ(resumed.history[i].point, ref.history[i].point) << i;
    EXPECT_EQ(resumed.history[i].loss, ref.history[i].loss) << i;
  }

  const auto lines = read_trial_log(dir / "part.jsonl", space);
  EXPECT_EQ(lines.size(), 25u);
  std::ifstream in(dir / "full.jsonl");
  std::string first;
  std::getline(in, first);
  const auto j = nlohmann::json::parse(first);
  for (const char* k : {"index", "params", "loss", "provenance", "wall_time"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j.at("params").size(), 2u);

  detail::write_file(dir / "bad.jsonl", "{\"index\": 0, \"params\": {\"x\": 2, \"y\": 0}, \"loss\": 1}\n");
  EXPECT_THROW(read_trial_log(dir / "bad.jsonl", space), TrialLogError);
  auto more = cfg;
  more.n_trials = 10;
  EXPECT_THROW(optimize(quadratic, space, more, part), TrialLogError);
}

TEST(TpeConfig, Validation) {
  TpeConfig c;
  EXPECT_NO_THROW(c.validate());
  c.n_startup = c.n_trials + 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.n_candidates = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(TpeConfig{}.n_trials, 300u);
  EXPECT_EQ(TpeConfig{}.n_startup, 50u);
  EXPECT_EQ(TpeConfig{}.gamma, 0.25);
  EXPECT_EQ(TpeConfig{}.n_candidates, 24u);
}
