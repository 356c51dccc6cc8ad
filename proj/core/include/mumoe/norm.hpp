#pragma once

#include <vector>

#include "mumoe/tensor.hpp"

namespace mumoe {

enum class NormKind { none, batch, layer };
enum class Mode { training, eval };

/// Normalization applied to gating logits before the simplex activation.
/// Batch kind normalizes each feature over the batch; layer kind each row
/// over its features. Both then apply the learnable gamma / beta.
template <typename T>
struct NormState {
  NormKind kind = NormKind::none;
  Tensor<T> gamma;         // (features)
  Tensor<T> beta;          // (features)
  Tensor<T> running_mean;  // (features), batch kind only
  Tensor<T> running_var;   // (features), batch kind only
  double momentum = 0.1;
  double eps = 1e-5;

  static NormState make(NormKind kind, std::size_t features, double momentum = 0.1, double eps = 1e-5);
  std::size_t features() const { return gamma.empty() ? 0 : gamma.size(); }
};

/// Everything the backward pass needs from a forward call.
template <typename T>
struct NormCache {
  Mode mode = Mode::eval;
  Tensor<T> normalized;  // x-hat before gamma / beta
  std::vector<double> inv_std;  // per feature (batch) or per row (layer)
  std::vector<double> batch_mean;
  std::vector<double> batch_var;  // biased
};

/// Pure forward: never touches the running statistics. Batch kind in
/// training mode needs at least two rows (UsageError otherwise).
template <typename T>
Tensor<T> normalize_forward(const NormState<T>& state, const Tensor<T>& x, Mode mode,
                            NormCache<T>* cache = nullptr);

/// Folds the batch statistics recorded in a training-mode cache into the
/// running estimates (unbiased variance, exponential moving average).
template <typename T>
void update_running_stats(NormState<T>& state, const NormCache<T>& cache, std::size_t batch_rows);

/// Forward plus running-stat update in training mode.
template <typename T>
Tensor<T> normalize(NormState<T>& state, const Tensor<T>& x, Mode mode);

template <typename T>
struct NormGrads {
  Tensor<T> input;
  Tensor<T> gamma;
  Tensor<T> beta;
};

template <typename T>
NormGrads<T> normalize_backward(const NormState<T>& state, const NormCache<T>& cache,
                                const Tensor<T>& upstream);

}  // namespace mumoe
