#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "siamlite/error.hpp"

namespace siamlite {

/// Extents of a 4-d NCHW tensor.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t count() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "[" + std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w) + "]";
  }
};

/// Dense row-major NCHW array. `Tensor` is the 32-bit working type, `TensorD`
/// the 64-bit one used for gradient checking.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{}) : shape_(shape), data_(shape.count(), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& vector() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[offset(n, c, y, x)];
  }
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(),
                   [](T v) { return static_cast<U>(v); });
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Largest elementwise absolute difference; shapes must agree.
template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return worst;
}

}  // namespace siamlite
