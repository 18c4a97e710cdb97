#pragma once

// Tactile datasets: collection protocol and on-disk format.
//
// A dataset directory holds
//
//   meta.json    object type, split, seed, sample count, image size, label
//                and perturbation ranges, simulator config and its sha256
//   index.csv    RFC-4180 with header
//                  id, <label components...>,
//                  p_dx, p_dy, p_ddepth, p_droll, p_dpitch, p_dyaw,
//                  image, sha256
//                label components follow label_components() order:
//                  surface: depth, roll, pitch
//                  edge:    x, depth, roll, pitch, yaw
//   NNNNNN.pgm   binary PGM (P5, 8-bit, values 0/255), one per sample
//
// Numbers are written in shortest round-trip form, so load(save(d)) == d.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "tactipose/checksum.hpp"
#include "tactipose/nn/train.hpp"
#include "tactipose/pose.hpp"
#include "tactipose/random.hpp"
#include "tactipose/tactile_sim.hpp"

namespace tactipose {

enum class Split { train, validation, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(s) + "'");
}

/// Split seeds derived from one base seed; always pairwise distinct.
inline std::uint64_t split_seed(std::uint64_t base, Split s) {
  return derive_seed(base, 0x5e11 + static_cast<std::uint64_t>(s));
}

struct Sample {
  std::size_t id = 0;
  TactileImage image;
  Pose label;
  Perturbation perturbation;  // audit only; never reaches training
  friend bool operator==(const Sample&, const Sample&) = default;
};

struct Dataset {
  ObjectType object_type = ObjectType::surface;
  Split split = Split::train;
  std::uint64_t seed = 0;
  PoseRanges label_ranges;
  PoseRanges perturbation_ranges;
  nlohmann::json simulator;  // config used to render the images
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  int image_size() const { return samples.empty() ? 0 : samples.front().image.size(); }
  friend bool operator==(const Dataset&, const Dataset&) = default;
};

class DatasetError : public std::runtime_error {
 public:
  enum class Kind {
    malformed_index,
    out_of_range,
    missing_image,
    truncated_image,
    checksum_mismatch,
    bad_metadata,
    io,
    simulation,
  };
  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// One labelled contact: pose and perturbation drawn from the (seed, id)
/// stream, then simulated and rendered.
inline Sample make_sample(const TactileSimulator& sim, const ContactObject& object, ObjectType type,
                          const PoseRanges& labels, const PoseRanges& perturbations,
                          std::uint64_t seed, std::size_t id) {
  Rng rng(seed, id);
  Sample s;
  s.id = id;
  s.label = sample_pose(labels, type, rng);
  s.perturbation = sample_perturbation(perturbations, rng);
  try {
    s.image = sim.capture(object, s.label, s.perturbation);
  } catch (const std::exception& e) {
    throw DatasetError(DatasetError::Kind::simulation,
                       "sample " + std::to_string(id) + ": " + e.what());
  }
  return s;
}

inline Dataset collect(ObjectType type, std::size_t n, const PoseRanges& labels,
                       const PoseRanges& perturbations, std::uint64_t seed,
                       const TactileSimulator& sim, Split split = Split::train,
                       unsigned threads = 1) {
  if (n < 1) throw std::invalid_argument("dataset needs at least one sample");
  labels.validate_labels(type);
  Dataset d;
  d.object_type = type;
  d.split = split;
  d.seed = seed;
  d.label_ranges = labels;
  d.perturbation_ranges = perturbations;
  d.simulator = sim.config_json();
  d.samples.resize(n);
  const ContactObject object = default_object(type);
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i)
      d.samples[i] = make_sample(sim, object, type, labels, perturbations, seed, i);
    return d;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads)
          d.samples[i] = make_sample(sim, object, type, labels, perturbations, seed, i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return d;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline nlohmann::json ranges_to_json(const PoseRanges& r) {
  auto j = nlohmann::json::object();
  for (auto c : r.present()) j[std::string(to_string(c))] = {r.at(c).lo, r.at(c).hi};
  return j;
}

inline PoseRanges ranges_from_json(const nlohmann::json& j) {
  PoseRanges r;
  for (const auto& [key, val] : j.items()) {
    const auto c = component_from_string(key);
    if (!c || !val.is_array() || val.size() != 2)
      throw DatasetError(DatasetError::Kind::bad_metadata, "bad range entry '" + key + "'");
    r.set(*c, {val[0].get<double>(), val[1].get<double>()});
  }
  return r;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DatasetError(DatasetError::Kind::io, "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DatasetError(DatasetError::Kind::io, "cannot write " + p.string());
}

}  // namespace detail

inline std::vector<std::string> index_header(ObjectType t) {
  std::vector<std::string> h{"id"};
  for (auto c : label_components(t)) h.emplace_back(to_string(c));
  for (const char* p : {"p_dx", "p_dy", "p_ddepth", "p_droll", "p_dpitch", "p_dyaw"})
    h.emplace_back(p);
  h.emplace_back("image");
  h.emplace_back("sha256");
  return h;
}

inline std::string image_filename(std::size_t id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.pgm", id);
  return buf;
}

inline void save(const Dataset& d, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DatasetError(DatasetError::Kind::io, "cannot create " + dir.string());

  std::string index;
  const auto header = index_header(d.object_type);
  for (std::size_t i = 0; i < header.size(); ++i) index += (i ? "," : "") + header[i];
  index += "\r\n";
  for (const auto& s : d.samples) {
    const auto pgm = encode_pgm(s.image);
    const auto name = image_filename(s.id);
    detail::write_file(dir / name, pgm);
    index += std::to_string(s.id);
    for (double v : to_vector(s.label)) index += "," + detail::format_double(v);
    for (double v : s.perturbation.components()) index += "," + detail::format_double(v);
    index += "," + name + "," + sha256_hex(pgm) + "\r\n";
  }
  detail::write_file(dir / "index.csv", index);

  nlohmann::json meta = {
      {"format", "tactipose-dataset"},
      {"format_version", 1},
      {"object_type", std::string(to_string(d.object_type))},
      {"split", std::string(to_string(d.split))},
      {"seed", d.seed},
      {"count", d.samples.size()},
      {"image_size", d.image_size()},
      {"label_ranges", detail::ranges_to_json(d.label_ranges)},
      {"perturbation_ranges", detail::ranges_to_json(d.perturbation_ranges)},
      {"simulator", d.simulator},
      {"simulator_sha256", sha256_hex(d.simulator.dump())},
  };
  detail::write_file(dir / "meta.json", meta.dump(2) + "\n");
}

inline Dataset load(const std::filesystem::path& dir) {
  using Kind = DatasetError::Kind;
  Dataset d;
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(detail::read_file(dir / "meta.json"));
    d.object_type = object_type_from_string(meta.at("object_type").get<std::string>());
    d.split = split_from_string(meta.at("split").get<std::string>());
    d.seed = meta.at("seed").get<std::uint64_t>();
    d.label_ranges = detail::ranges_from_json(meta.at("label_ranges"));
    d.perturbation_ranges = detail::ranges_from_json(meta.at("perturbation_ranges"));
    d.simulator = meta.at("simulator");
    d.label_ranges.validate_labels(d.object_type);
  } catch (const DatasetError&) {
    throw;
  } catch (const std::exception& e) {
    throw DatasetError(Kind::bad_metadata, (dir / "meta.json").string() + ": " + e.what());
  }

  const auto index_path = dir / "index.csv";
  std::istringstream index(detail::read_file(index_path));
  std::string line;
  const auto header = index_header(d.object_type);
  if (!std::getline(index, line) || detail::split_csv_line(line) != header)
    throw DatasetError(Kind::malformed_index, index_path.string() + ": unexpected header");

  const auto comps = label_components(d.object_type);
  const std::size_t nl = comps.size();
  std::size_t row = 1;
  while (std::getline(index, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    const std::string where = index_path.string() + " row " + std::to_string(row);
    if (f.size() != header.size())
      throw DatasetError(Kind::malformed_index, where + ": expected " +
                                                     std::to_string(header.size()) + " fields");
    Sample s;
    std::size_t id = 0;
    const auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), id);
    if (ec != std::errc() || p != f[0].data() + f[0].size())
      throw DatasetError(Kind::malformed_index, where + ": bad id '" + f[0] + "'");
    s.id = id;
    std::vector<double> nums;
    for (std::size_t k = 1; k < 1 + nl + 6; ++k) {
      const auto v = detail::parse_double(f[k]);
      if (!v) throw DatasetError(Kind::malformed_index, where + ": bad number '" + f[k] + "'");
      nums.push_back(*v);
    }
    for (std::size_t k = 0; k < nl; ++k)
      if (!d.label_ranges.at(comps[k]).contains(nums[k]))
        throw DatasetError(Kind::out_of_range, "sample " + std::to_string(id) + ": " +
                                                   std::string(to_string(comps[k])) + " " +
                                                   f[k + 1] + " outside its declared range");
    s.label = pose_from_vector(d.object_type, std::span(nums).first(nl));
    s.perturbation = {nums[nl], nums[nl + 1], nums[nl + 2], nums[nl + 3], nums[nl + 4],
                      nums[nl + 5]};
    const auto pc = s.perturbation.components();
    static constexpr Component kPertComps[6] = {Component::x,    Component::y,     Component::depth,
                                                Component::roll, Component::pitch, Component::yaw};
    for (std::size_t k = 0; k < 6; ++k)
      if (d.perturbation_ranges.has(kPertComps[k]) &&
          !d.perturbation_ranges.at(kPertComps[k]).contains(pc[k]))
        throw DatasetError(Kind::out_of_range, "sample " + std::to_string(id) +
                                                   ": perturbation outside its declared range");

    const auto img_path = dir / f[nl + 7];
    if (!std::filesystem::exists(img_path))
      throw DatasetError(Kind::missing_image, "missing image file " + img_path.string());
    const auto bytes = detail::read_file(img_path);
    try {
      s.image = decode_pgm(bytes);
    } catch (const PgmError& e) {
      throw DatasetError(Kind::truncated_image, img_path.string() + ": " + e.what());
    }
    if (sha256_hex(bytes) != f[nl + 8])
      throw DatasetError(Kind::checksum_mismatch, "checksum mismatch for " + img_path.string());
    d.samples.push_back(std::move(s));
  }
  if (d.samples.empty())
    throw DatasetError(Kind::malformed_index, index_path.string() + ": no samples");
  return d;
}

/// Component-wise label scaling by 1/max|bound| and its inverse.
class LabelScaler {
 public:
  LabelScaler() = default;
  explicit LabelScaler(std::vector<double> scales) : scales_(std::move(scales)) {
    for (double s : scales_)
      if (!(s > 0.0)) throw std::invalid_argument("label scale must be positive");
  }
  static LabelScaler from_ranges(const PoseRanges& r, ObjectType t) {
    return LabelScaler(label_scales(r, t));
  }

  const std::vector<double>& scales() const { return scales_; }

  std::vector<double> forward(std::span<const double> v) const {
    check(v.size());
    std::vector<double> out(v.begin(), v.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= scales_[i];
    return out;
  }
  std::vector<double> inverse(std::span<const double> v) const {
    check(v.size());
    std::vector<double> out(v.begin(), v.end());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= scales_[i];
    return out;
  }

 private:
  void check(std::size_t n) const {
    if (n != scales_.size()) throw std::invalid_argument("label dimension mismatch");
  }
  std::vector<double> scales_;
};

struct NormalizedLabels {
  std::vector<std::vector<double>> labels;
  LabelScaler scaler;
};

inline NormalizedLabels normalize_labels(const Dataset& d) {
  NormalizedLabels out{{}, LabelScaler::from_ranges(d.label_ranges, d.object_type)};
  for (const auto& s : d.samples) out.labels.push_back(out.scaler.forward(to_vector(s.label)));
  return out;
}

/// Image tensor (n, 1, size, size) with pixels in {0, 1}.
template <typename T>
nn::Tensor<T> image_tensor(const Dataset& d) {
  const auto sz = static_cast<std::size_t>(d.image_size());
  nn::Tensor<T> x({d.size(), 1, sz, sz});
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& px = d.samples[i].image.pixels();
    std::transform(px.begin(), px.end(), x.sample(i).begin(),
                   [](std::uint8_t v) { return static_cast<T>(v); });
  }
  return x;
}

/// Image/label pairs with labels scaled by `scaler`: the only view of a
/// dataset that training code receives.
template <typename T>
nn::LabelledSet<T> to_labelled_set(const Dataset& d, const LabelScaler& scaler) {
  nn::LabelledSet<T> set;
  set.inputs = image_tensor<T>(d);
  const auto k = label_size(d.object_type);
  set.targets.assign({d.size(), k, 1, 1});
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto y = scaler.forward(to_vector(d.samples[i].label));
    for (std::size_t c = 0; c < k; ++c) set.targets(i, c) = static_cast<T>(y[c]);
  }
  return set;
}

}  // namespace tactipose
