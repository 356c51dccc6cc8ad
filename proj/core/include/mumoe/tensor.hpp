#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "mumoe/errors.hpp"

namespace mumoe {

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor (last index fastest).
///
/// A constructed tensor always has order >= 1 and every extent >= 1. The
/// default-constructed tensor is an empty placeholder with order 0 that
/// only exists so tensors can live in resizable containers.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(Shape shape, std::vector<T> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  /// Order-1 tensor holding `values`.
  static Tensor vector(std::vector<T> values);
  /// Order-2 tensor from nested rows; all rows must have equal length.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows);

  const Shape& shape() const noexcept { return shape_; }
  const std::vector<std::size_t>& strides() const noexcept { return strides_; }
  std::size_t order() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& values() noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t flat) noexcept { return data_[flat]; }
  const T& operator[](std::size_t flat) const noexcept { return data_[flat]; }

  template <typename... Idx>
  T& operator()(Idx... idx) noexcept {
    return data_[offset(static_cast<std::size_t>(idx)...)];
  }
  template <typename... Idx>
  const T& operator()(Idx... idx) const noexcept {
    return data_[offset(static_cast<std::size_t>(idx)...)];
  }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  /// Row `r` of an order-2 tensor as a contiguous view.
  std::span<T> row(std::size_t r) { return {data_.data() + r * strides_[0], shape_[1]}; }
  std::span<const T> row(std::size_t r) const {
    return {data_.data() + r * strides_[0], shape_[1]};
  }

  /// Same data, new shape of equal volume.
  Tensor reshaped(Shape shape) const;
  void fill(T value);

  bool operator==(const Tensor& other) const = default;

 private:
  template <typename... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    std::size_t flat = 0;
    std::size_t axis = 0;
    ((flat += idx * strides_[axis++]), ...);
    return flat;
  }

  void compute_strides();

  Shape shape_;
  std::vector<std::size_t> strides_;
  std::vector<T> data_;
};

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& in) {
  std::vector<U> out(in.size());
  for (std::size_t k = 0; k < in.size(); ++k) out[k] = static_cast<U>(in[k]);
  return Tensor<U>(in.shape(), std::move(out));
}

/// Matrix transpose of an order-2 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& m);

/// Plain matrix product of two order-2 tensors, accumulated in double.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
double frobenius_norm(const Tensor<T>& t);

/// ||a - b||_F / max(||b||_F, tiny); shapes must match.
template <typename T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace mumoe
