#pragma once

#include <span>

#include "mumoe/tensor.hpp"

namespace mumoe {

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;  // dL/dlogits, same shape as the logits
};

/// Mean negative log-softmax of the true class; grad = (softmax - onehot) / B.
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

}  // namespace mumoe
