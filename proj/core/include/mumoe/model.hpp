#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mumoe/activations.hpp"
#include "mumoe/moe_layer.hpp"

namespace mumoe {

/// Either a single gated layer or a two-layer block
///   y = L2(act(L1(z; a)); a),  a = gating of L1 applied to z,
/// where the second layer is ungated and reuses the first layer's
/// coefficients (including any expert masks).
template <typename T>
struct Model {
  using value_type = T;

  MoeLayer<T> first;
  std::optional<MoeLayer<T>> second;
  Pointwise hidden = Pointwise::gelu;

  bool is_block() const { return second.has_value(); }
  std::size_t input_dim() const { return first.config.input_dim; }
  std::size_t output_dim() const { return second ? second->config.output_dim : first.config.output_dim; }

  /// Throws ShapeError when the layers do not chain or disagree on experts.
  void validate() const;

  /// Parameters of both layers, names prefixed with "layer1." / "layer2.".
  std::vector<ParamRef<T>> parameters();
  std::vector<ConstParamRef<T>> parameters() const;
  std::size_t parameter_count() const;
};

template <typename T>
struct ModelCache {
  ForwardCache<T> first;
  MultilinearCache<T> second;
  Tensor<T> hidden_pre;  // L1 output before the activation
};

template <typename T>
struct ModelGrads {
  std::vector<Tensor<T>> params;  // Model::parameters() order
  Tensor<T> input;
};

template <typename T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& z, Mode mode, ModelCache<T>* cache = nullptr);

template <typename T>
ModelGrads<T> model_backward(const Model<T>& model, const ModelCache<T>& cache, const Tensor<T>& upstream);

/// Gating coefficients of the first layer (masks applied).
template <typename T>
ExpertCoefficients<T> model_coefficients(const Model<T>& model, const Tensor<T>& z, Mode mode = Mode::eval);

/// Output for frozen coefficients; masks still apply.
template <typename T>
Tensor<T> model_forward_with_coefficients(const Model<T>& model, const ExpertCoefficients<T>& coeffs,
                                          const Tensor<T>& z);

template <typename T>
void commit_running_stats(Model<T>& model, const ModelCache<T>& cache);

}  // namespace mumoe
