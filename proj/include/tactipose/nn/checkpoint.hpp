#pragma once

// Model checkpoint container. All integers and floats are little-endian.
//
//   magic      8 bytes  "TPNCKPT\0"
//   version    u32      kCheckpointVersion
//   input      u64 x3   channels, height, width
//   n_layers   u32
//   layer      u8 kind, u64 size, u8 activation, f64 rate     (n_layers times)
//   n_tensors  u32      parameters in layer order, then running statistics
//   tensor     u64 count, f64 x count                         (n_tensors times)
//   metadata   u64 length, UTF-8 JSON
//
// Parameters are always stored at 64-bit precision.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "tactipose/nn/model.hpp"

namespace tactipose::nn {

inline constexpr char kCheckpointMagic[8] = {'T', 'P', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out_.append(reinterpret_cast<const char*>(b), sizeof(U));
  }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}
  template <typename U>
  U get() {
    need(sizeof(U));
    unsigned char b[sizeof(U)];
    std::memcpy(b, in_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, b, sizeof(U));
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw CheckpointError("checkpoint is truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const Model<T>& model, const nlohmann::json& metadata) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  const auto& in = model.input_shape();
  w.put<std::uint64_t>(in.c);
  w.put<std::uint64_t>(in.h);
  w.put<std::uint64_t>(in.w);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.specs().size()));
  for (const auto& s : model.specs()) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
    w.put<std::uint64_t>(s.size);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(s.activation));
    w.put<double>(s.rate);
  }
  const auto st = model.state();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.size()));
  for (const auto& t : st) {
    w.put<std::uint64_t>(t.size());
    for (auto v : t) w.put<double>(static_cast<double>(v));
  }
  const auto meta = metadata.dump();
  w.put<std::uint64_t>(meta.size());
  w.bytes(meta.data(), meta.size());
  return w.str();
}

template <typename T>
struct Checkpoint {
  Model<T> model;
  nlohmann::json metadata;
};

template <typename T>
Checkpoint<T> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic)))
    throw CheckpointError("not a model checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) +
                          ")");
  Shape in;
  in.n = 1;
  in.c = r.get<std::uint64_t>();
  in.h = r.get<std::uint64_t>();
  in.w = r.get<std::uint64_t>();
  const auto n_layers = r.get<std::uint32_t>();
  std::vector<LayerSpec> specs;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    LayerSpec s;
    s.kind = static_cast<LayerKind>(r.get<std::uint8_t>());
    s.size = r.get<std::uint64_t>();
    s.activation = static_cast<Activation>(r.get<std::uint8_t>());
    s.rate = r.get<double>();
    specs.push_back(s);
  }
  Model<T> model(in, specs);
  const auto n_tensors = r.get<std::uint32_t>();
  std::vector<std::vector<T>> st(n_tensors);
  for (auto& t : st) {
    const auto count = r.get<std::uint64_t>();
    t.resize(count);
    for (auto& v : t) v = static_cast<T>(r.get<double>());
  }
  try {
    model.load_state(st);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint tensors do not match layer table: ") + e.what());
  }
  const auto meta_len = r.get<std::uint64_t>();
  auto meta = nlohmann::json::parse(r.bytes(meta_len));
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint metadata");
  return {std::move(model), std::move(meta)};
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  const auto bytes = encode_checkpoint(model, metadata);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return decode_checkpoint<T>(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace tactipose::nn
