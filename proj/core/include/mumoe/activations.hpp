#pragma once

#include <span>
#include <vector>

#include "mumoe/tensor.hpp"

namespace mumoe {

/// Exact 1.5-entmax: p_i = [(z_i / 2 - tau)_+]^2 with tau chosen so the
/// output sums to one. Throws DomainError on non-finite logits.
template <typename T>
std::vector<T> entmax15(std::span<const T> logits);

/// Vector-Jacobian product of entmax15 evaluated at its output `probs`.
template <typename T>
std::vector<T> entmax15_vjp(std::span<const T> probs, std::span<const T> upstream);

template <typename T>
std::vector<T> softmax(std::span<const T> logits);

template <typename T>
std::vector<T> softmax_vjp(std::span<const T> probs, std::span<const T> upstream);

enum class GateActivation { entmax15, softmax };

/// Row-wise simplex activation over an order-2 tensor.
template <typename T>
Tensor<T> simplex_rows(GateActivation kind, const Tensor<T>& logits);

/// Row-wise vjp matching simplex_rows; `probs` is the forward output.
template <typename T>
Tensor<T> simplex_rows_vjp(GateActivation kind, const Tensor<T>& probs, const Tensor<T>& upstream);

enum class Pointwise { identity, gelu, relu };

/// GELU uses the exact x * Phi(x) form with Phi from erf.
double pointwise(Pointwise kind, double x);
double pointwise_derivative(Pointwise kind, double x);

template <typename T>
Tensor<T> pointwise(Pointwise kind, const Tensor<T>& x);

}  // namespace mumoe
