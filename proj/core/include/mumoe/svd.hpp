#pragma once

#include <vector>

#include "mumoe/tensor.hpp"

namespace mumoe {

/// Thin SVD M = U diag(s) V^T with s descending. For an m x n input,
/// U is m x k, V is n x k, k = min(m, n).
template <typename T>
struct Svd {
  Tensor<T> u;
  std::vector<T> s;
  Tensor<T> v;
};

/// One-sided Jacobi SVD. Sweeps until every column pair is orthogonal to
/// within 1e-12 (double) or 1e-6 (float) relative to the column norms.
template <typename T>
Svd<T> svd(const Tensor<T>& m);

template <typename T>
std::vector<T> singular_values(const Tensor<T>& m);

/// Best rank-k approximation (Eckart-Young); k is clamped to min(m, n).
template <typename T>
Tensor<T> truncate(const Tensor<T>& m, std::size_t k);

/// Number of singular values strictly above tol * s_max.
template <typename T>
std::size_t numerical_rank(const Tensor<T>& m, double tol = 1e-9);

}  // namespace mumoe
