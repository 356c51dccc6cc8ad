#include "mumoe/decomposition.hpp"

#include <string>

namespace mumoe {

template <typename T>
Tensor<T> khatri_rao(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.order() != 2 || b.order() != 2) throw ShapeError("khatri_rao needs matrices");
  if (a.cols() != b.cols())
    throw ShapeError("khatri_rao column mismatch: " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()));
  const std::size_t ni = a.rows(), nj = b.rows(), nr = a.cols();
  Tensor<T> out({ni * nj, nr});
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j)
      for (std::size_t r = 0; r < nr; ++r) out(i * nj + j, r) = a(i, r) * b(j, r);
  return out;
}

template <typename T>
Tensor<T> cp_materialize(std::span<const Tensor<T>> factors, const Shape& shape) {
  if (factors.size() != shape.size())
    throw ShapeError("cp_materialize: " + std::to_string(factors.size()) + " factors for order " +
                     std::to_string(shape.size()));
  if (factors.empty()) throw ShapeError("cp_materialize needs at least one factor");
  const std::size_t rank = factors[0].order() == 2 ? factors[0].rows() : 0;
  for (std::size_t k = 0; k < factors.size(); ++k) {
    if (factors[k].order() != 2 || factors[k].rows() != rank)
      throw ShapeError("cp_materialize: factors must share rank " + std::to_string(rank));
    if (factors[k].cols() != shape[k])
      throw ShapeError("cp_materialize: factor " + std::to_string(k + 1) + " has mode dimension " +
                       std::to_string(factors[k].cols()) + ", expected " + std::to_string(shape[k]));
  }

  Tensor<T> out(shape);
  std::vector<std::size_t> idx(shape.size(), 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    double acc = 0.0;
    for (std::size_t r = 0; r < rank; ++r) {
      double prod = 1.0;
      for (std::size_t k = 0; k < factors.size(); ++k) prod *= double(factors[k](r, idx[k]));
      acc += prod;
    }
    out[flat] = static_cast<T>(acc);
    for (std::size_t k = idx.size(); k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

template <typename T>
void check_ring(std::span<const Tensor<T>> cores) {
  if (cores.empty()) throw ShapeError("tensor ring needs at least one core");
  for (std::size_t k = 0; k < cores.size(); ++k) {
    if (cores[k].order() != 3) throw ShapeError("tensor ring cores must have order 3");
    const auto& next = cores[(k + 1) % cores.size()];
    if (cores[k].extent(2) != next.extent(0))
      throw ShapeError("tensor ring not closed between core " + std::to_string(k + 1) + " " +
                       shape_string(cores[k].shape()) + " and core " +
                       std::to_string((k + 1) % cores.size() + 1) + " " + shape_string(next.shape()));
  }
}

template <typename T>
Tensor<T> tr_materialize(std::span<const Tensor<T>> cores) {
  check_ring(cores);
  Shape shape;
  for (const auto& c : cores) shape.push_back(c.extent(1));

  Tensor<T> out(shape);
  const std::size_t r0 = cores[0].extent(0);
  std::vector<std::size_t> idx(shape.size(), 0);
  std::vector<double> chain, next;
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    // chain = U_1(:, i_1, :) as an r0 x R_2 matrix, then multiply through.
    std::size_t cols = cores[0].extent(2);
    chain.assign(r0 * cols, 0.0);
    for (std::size_t a = 0; a < r0; ++a)
      for (std::size_t b = 0; b < cols; ++b) chain[a * cols + b] = double(cores[0](a, idx[0], b));
    for (std::size_t k = 1; k < cores.size(); ++k) {
      const std::size_t inner = cores[k].extent(0);
      const std::size_t next_cols = cores[k].extent(2);
      next.assign(r0 * next_cols, 0.0);
      for (std::size_t a = 0; a < r0; ++a)
        for (std::size_t c = 0; c < next_cols; ++c) {
          double acc = 0.0;
          for (std::size_t b = 0; b < inner; ++b)
            acc += chain[a * inner + b] * double(cores[k](b, idx[k], c));
          next[a * next_cols + c] = acc;
        }
      chain.swap(next);
      cols = next_cols;
    }
    double trace = 0.0;
    for (std::size_t a = 0; a < r0; ++a) trace += chain[a * cols + a];
    out[flat] = static_cast<T>(trace);
    for (std::size_t k = idx.size(); k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

template Tensor<float> khatri_rao(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> khatri_rao(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> cp_materialize(std::span<const Tensor<float>>, const Shape&);
template Tensor<double> cp_materialize(std::span<const Tensor<double>>, const Shape&);
template void check_ring(std::span<const Tensor<float>>);
template void check_ring(std::span<const Tensor<double>>);
template Tensor<float> tr_materialize(std::span<const Tensor<float>>);
template Tensor<double> tr_materialize(std::span<const Tensor<double>>);

}  // namespace mumoe
