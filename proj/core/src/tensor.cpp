#include "mumoe/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>

namespace mumoe {

std::size_t shape_volume(const Shape& shape) {
  std::size_t v = 1;
  for (auto e : shape) v *= e;
  return v;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t k = 0; k < shape.size(); ++k) os << (k ? "," : "") << shape[k];
  os << ')';
  return os.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor order must be >= 1");
  for (auto e : shape)
    if (e == 0) throw ShapeError("tensor extents must be >= 1, got " + shape_string(shape));
}

}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_volume(shape_), fill);
  compute_strides();
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != shape_volume(shape_))
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
  compute_strides();
}

template <typename T>
Tensor<T> Tensor<T>::vector(std::vector<T> values) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<T> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

template <typename T>
void Tensor<T>::fill(T value) {
  for (auto& x : data_) x = value;
}

template <typename T>
void Tensor<T>::compute_strides() {
  strides_.assign(shape_.size(), 1);
  for (std::size_t k = shape_.size(); k-- > 1;) strides_[k - 1] = strides_[k] * shape_[k];
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& m) {
  if (m.order() != 2) throw ShapeError("transpose needs a matrix");
  Tensor<T> out({m.cols(), m.rows()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.order() != 2 || b.order() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul shape mismatch " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  Tensor<T> out({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += double(a(i, k)) * double(b(k, j));
      out(i, j) = static_cast<T>(acc);
    }
  return out;
}

template <typename T>
double frobenius_norm(const Tensor<T>& t) {
  double acc = 0.0;
  for (auto x : t.data()) acc += double(x) * double(x);
  return std::sqrt(acc);
}

template <typename T>
double relative_error(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw ShapeError("relative_error shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  double diff = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = double(a[k]) - double(b[k]);
    diff += d * d;
  }
  const double ref = frobenius_norm(b);
  return std::sqrt(diff) / std::max(ref, std::numeric_limits<double>::min());
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> transpose(const Tensor<float>&);
template Tensor<double> transpose(const Tensor<double>&);
template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template double frobenius_norm(const Tensor<float>&);
template double frobenius_norm(const Tensor<double>&);
template double relative_error(const Tensor<float>&, const Tensor<float>&);
template double relative_error(const Tensor<double>&, const Tensor<double>&);

}  // namespace mumoe
