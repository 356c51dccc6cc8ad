#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mumoe/moe_layer.hpp"

namespace mumoe {

enum class OptimKind { sgd_momentum, adam };

std::string to_string(OptimKind kind);
OptimKind parse_optim_kind(const std::string& text);

struct OptimConfig {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // sgd_momentum
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// slot1 holds the momentum / first-moment buffers, slot2 Adam's second
/// moments; both are created as zeros on the first step.
template <typename T>
struct OptimState {
  OptimConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> slot1;
  std::vector<Tensor<T>> slot2;
};

/// sgd_momentum: v = mu v + g, p -= lr v.
/// adam: bias-corrected moments, p -= lr m_hat / (sqrt(v_hat) + eps).
template <typename T>
void optimizer_step(OptimState<T>& state, std::span<const ParamRef<T>> params, std::span<const Tensor<T>> grads);

}  // namespace mumoe
