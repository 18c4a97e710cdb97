#pragma once

// Run profiles and artifact manifests shared by the command-line tool and
// the end-to-end tests.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tactipose/checksum.hpp"
#include "tactipose/dataset.hpp"
#include "tactipose/hpo.hpp"
#include "tactipose/posenet.hpp"

namespace tactipose {

inline constexpr const char* kToolVersion = "0.1.0";

struct Profile {
  std::string name;
  int image_size = 64;
  std::size_t samples = 500;  // per split
  std::size_t trials = 30;
  std::size_t startup = 10;
  FitOptions fit;
  int trial_epochs = 20;  // epoch cap for each optimisation trial

  static Profile small() {
    Profile p{"small", 64, 500, 30, 10, {}, 20};
    p.fit.learning_rate = 1e-3;
    p.fit.max_epochs = 150;
    return p;
  }
  static Profile full() {
    Profile p{"full", 128, 2000, 300, 50, {}, 200};
    p.fit.learning_rate = 1e-4;
    p.fit.max_epochs = 200;
    return p;
  }
  FitOptions trial_fit() const {
    auto f = fit;
    f.max_epochs = trial_epochs;
    return f;
  }

  static Profile named(const std::string& name) {
    if (name == "small") return small();
    if (name == "full") return full();
    throw std::invalid_argument("unknown profile '" + name + "' (expected small or full)");
  }

  tpe::SearchSpace search_space() const {
    return name == "full" ? full_search_space() : small_search_space();
  }

  /// Starting point for `train` when no hyperparameters are given.
  Hyperparams default_hyperparams(ObjectType t) const {
    if (name == "full") return t == ObjectType::surface ? Hyperparams::surface_optimum() : Hyperparams::edge_optimum();
    return small_reference_hyperparams();
  }

  /// Fixed desk-scale network used by the small-profile pipeline.
  static Hyperparams small_reference_hyperparams() {
    Hyperparams hp;
    hp.n_conv = 3;
    hp.n_filters = 32;
    hp.n_dense = 1;
    hp.n_units = 128;
    hp.dropout = 0.1;
    hp.l1 = 1e-4;
    hp.l2 = 1e-4;
    hp.batch_size = 16;
    return hp;
  }
};

/// Worker threads for data generation: TACTIPOSE_THREADS, else all cores.
inline unsigned worker_threads() {
  if (const char* env = std::getenv("TACTIPOSE_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Train/validation/test sets drawn from per-split seeds derived from `seed`.
struct DatasetSplits {
  Dataset train, validation, test;
};

inline DatasetSplits generate_splits(ObjectType type, std::size_t n, std::uint64_t seed,
                                     const TactileSimulator& sim, unsigned threads = 1) {
  const auto labels = default_label_ranges(type);
  const auto perts = default_perturbation_ranges();
  auto make = [&](Split s) {
    return collect(type, n, labels, perts, split_seed(seed, s), sim, s, threads);
  };
  return {make(Split::train), make(Split::validation), make(Split::test)};
}

inline TactileSimulator simulator_for(const Profile& p) {
  SensorGeometry g;
  g.image_size = p.image_size;
  return TactileSimulator(g);
}

// ---------------------------------------------------------------------------
// Manifests: "<sha256>  <relative path>" per file, sorted by path.

/// Hash of a trial log with the wall-time fields removed, so reruns compare
/// equal.
inline std::string canonical_trial_log_hash(const std::filesystem::path& log) {
  std::ifstream in(log);
  std::string line, canon;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    j.erase("wall_time");
    canon += j.dump() + "\n";
  }
  return sha256_hex(canon);
}

inline std::string file_hash(const std::filesystem::path& p) {
  if (p.extension() == ".jsonl") return canonical_trial_log_hash(p);
  return sha256_hex(detail::read_file(p));
}

/// Manifest of every regular file under `dir` except run.json and the
/// manifest itself.
inline std::string build_manifest(const std::filesystem::path& dir) {
  std::vector<std::string> rel;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto name = e.path().filename().string();
    if (name == "run.json" || name == "manifest.sha256") continue;
    rel.push_back(std::filesystem::relative(e.path(), dir).generic_string());
  }
  std::sort(rel.begin(), rel.end());
  std::string out;
  for (const auto& r : rel) out += file_hash(dir / r) + "  " + r + "\n";
  return out;
}

inline void write_manifest(const std::filesystem::path& dir) {
  detail::write_file(dir / "manifest.sha256", build_manifest(dir));
}

}  // namespace tactipose
