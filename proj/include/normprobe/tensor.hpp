// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace normprobe {

/// Extent of a batch x channel x spatial array.
struct Shape3 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t s = 0;

  constexpr std::size_t numel() const { return n * c * s; }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense (N, C, S) row-major array with an optional same-shape gradient.
///
/// `grad` stays empty until something accumulates into it; `has_grad()`
/// distinguishes "never touched" from "touched and zero".
template <typename T>
class Tensor3 {
 public:
  Tensor3() = default;
  explicit Tensor3(Shape3 shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  const Shape3& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator()(std::size_t n, std::size_t c, std::size_t s) {
    return data_[(n * shape_.c + c) * shape_.s + s];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t s) const {
    return data_[(n * shape_.c + c) * shape_.s + s];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  /// Gradient buffer, zero-allocated on first access.
  std::span<T> grad() {
    if (grad_.empty()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  std::span<const T> grad() const { return grad_; }
  void zero_grad() { grad_.clear(); }

  /// Copy of the values without gradient state.
  Tensor3 detached() const { return Tensor3(shape_, data_); }

  template <typename U>
  Tensor3<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor3<U>(shape_, std::move(out));
  }

 private:
  Shape3 shape_{};
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

using Tensor3f = Tensor3<float>;
using Tensor3d = Tensor3<double>;

/// Throws ShapeError unless every entry is finite.
template <typename T>
void require_finite(const Tensor3<T>& t, const char* what);

template <typename T>
bool all_finite(std::span<const T> values);

}  // namespace normprobe
