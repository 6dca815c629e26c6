#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stsc/error.hpp"

namespace stsc {

/// (batch, channel, height, width) extents of a Tensor4.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
           std::to_string(w) + ")";
  }
};

/// Dense 4-D array in row-major (n, c, h, w) order.
///
/// Gradients are not stored here; they live on the Tape node that owns a
/// recorded value (see tape.hpp). A Tensor4 is a plain value type.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;

  explicit Tensor4(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}

  Tensor4(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("Tensor4: data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  static Tensor4 scalar(T v) { return Tensor4(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
    return data_[offset(n, c, y, x)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[offset(n, c, y, x)];
  }

  /// Pointer to the first element of plane (n, c).
  T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const noexcept {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  /// Single element of a 1x1x1x1 tensor.
  T item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_.str());
    return data_[0];
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor4<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor4& a, const Tensor4& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Largest absolute elementwise difference; shapes must match.
template <typename T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  T m{0};
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace stsc
