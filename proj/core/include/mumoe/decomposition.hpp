#pragma once

#include <span>
#include <vector>

#include "mumoe/tensor.hpp"

namespace mumoe {

/// Column-wise Kronecker product. Row (i * J + j) of the result holds
/// A(i, r) * B(j, r) in column r.
template <typename T>
Tensor<T> khatri_rao(const Tensor<T>& a, const Tensor<T>& b);

/// Materializes sum_r prod_k U_k(r, i_k) from rank-major factor matrices
/// U_k of shape (R, shape[k]).
template <typename T>
Tensor<T> cp_materialize(std::span<const Tensor<T>> factors, const Shape& shape);

/// Throws ShapeError unless `cores` form a closed ring of order-3 cores
/// (R_k, n_k, R_{k+1}) with the last R_out equal to the first R_in.
template <typename T>
void check_ring(std::span<const Tensor<T>> cores);

/// Materializes tr(U_1(:, i_1, :) U_2(:, i_2, :) ... U_d(:, i_d, :)).
template <typename T>
Tensor<T> tr_materialize(std::span<const Tensor<T>> cores);

}  // namespace mumoe
