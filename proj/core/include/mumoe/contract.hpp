#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "mumoe/tensor.hpp"

namespace mumoe {

/// Mode-n (vector) product T x_n v, with `mode` 1-based as in the usual
/// tensor notation. The result drops mode n; contracting the last mode of
/// an order-1 tensor yields a shape-(1) scalar tensor.
template <typename T>
Tensor<T> mode_n_vector_product(const Tensor<T>& t, std::span<const T> v, std::size_t mode);

/// General sum-of-products contraction described by an index-pairing
/// string such as "nio,n,i->o". Each operand term labels its modes with
/// single letters; a label shared between terms is contracted unless it
/// also appears in the output. A label repeated inside one term selects
/// the diagonal. An empty output term ("ij,ij->") yields a shape-(1)
/// scalar.
///
/// Summation runs over the contracted labels in ascending flat order, so
/// the result is bit-reproducible. Accumulation is in double.
template <typename T>
Tensor<T> contract(std::string_view spec, std::span<const Tensor<T>* const> operands);

template <typename T>
Tensor<T> contract(std::string_view spec, std::initializer_list<const Tensor<T>*> operands) {
  std::vector<const Tensor<T>*> ops(operands);
  return contract<T>(spec, std::span<const Tensor<T>* const>(ops));
}

}  // namespace mumoe
