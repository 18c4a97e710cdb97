#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tactipose::nn {

/// Batch-major 4-axis shape (batch, channel, height, width). Dense data uses
/// (batch, features, 1, 1).
struct Shape {
  std::size_t n = 0, c = 0, h = 1, w = 1;

  std::size_t size() const { return n * c * h * w; }
  std::size_t per_sample() const { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape_(s), data_(s.size(), fill) {}
  Tensor(Shape s, std::vector<T> data) : shape_(s), data_(std::move(data)) {
    if (data_.size() != shape_.size())
      throw std::invalid_argument("tensor buffer size does not match shape " + shape_.str());
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& operator()(std::size_t n, std::size_t c, std::size_t h = 0, std::size_t w = 0) {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h = 0, std::size_t w = 0) const {
    return data_[((n * shape_.c + c) * shape_.h + h) * shape_.w + w];
  }

  std::span<T> sample(std::size_t n) {
    return {data_.data() + n * shape_.per_sample(), shape_.per_sample()};
  }
  std::span<const T> sample(std::size_t n) const {
    return {data_.data() + n * shape_.per_sample(), shape_.per_sample()};
  }

  /// Reinterpret with a new shape of equal element count.
  void reshape(Shape s) {
    if (s.size() != data_.size())
      throw std::invalid_argument("cannot reshape " + shape_.str() + " to " + s.str());
    shape_ = s;
  }

  /// Resize to shape s, zero-filling; reuses storage.
  void assign(Shape s, T fill = T{0}) {
    shape_ = s;
    data_.assign(s.size(), fill);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Rows [first, first + count) along the batch axis.
  Tensor slice(std::size_t first, std::size_t count) const {
    Shape s = shape_;
    s.n = count;
    const auto per = shape_.per_sample();
    return {s, std::vector<T>(data_.begin() + static_cast<std::ptrdiff_t>(first * per),
                              data_.begin() + static_cast<std::ptrdiff_t>((first + count) * per))};
  }

  /// Gather the listed batch rows.
  Tensor gather(std::span<const std::size_t> rows) const {
    Shape s = shape_;
    s.n = rows.size();
    Tensor out(s);
    const auto per = shape_.per_sample();
    for (std::size_t i = 0; i < rows.size(); ++i)
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(rows[i] * per), per,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * per));
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

}  // namespace tactipose::nn
