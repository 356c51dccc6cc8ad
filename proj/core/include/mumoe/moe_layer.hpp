#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mumoe/activations.hpp"
#include "mumoe/layer_config.hpp"
#include "mumoe/norm.hpp"
#include "mumoe/tensor.hpp"

namespace mumoe {

/// Gating matrix G_e (I x N_e) and the normalization applied to G_e^T z.
template <typename T>
struct GateLevel {
  Tensor<T> weight;
  NormState<T> norm;
};

/// Full weight tensor N_1 x ... x N_E x I' x O.
template <typename T>
struct DenseWeights {
  Tensor<T> w;
};

/// E + 2 factor matrices of shape (R, dim_k): expert modes, input, output.
template <typename T>
struct CpWeights {
  std::vector<Tensor<T>> factors;
};

/// E + 2 cores of shape (R_k, dim_k, R_{k+1}) closing into a ring.
template <typename T>
struct TrWeights {
  std::vector<Tensor<T>> cores;
};

template <typename T>
using Weights = std::variant<DenseWeights<T>, CpWeights<T>, TrWeights<T>>;

/// Per-level B x N_e matrices whose rows lie on the simplex.
template <typename T>
struct ExpertCoefficients {
  std::vector<Tensor<T>> levels;
  std::size_t batch() const { return levels.empty() ? 0 : levels.front().rows(); }
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct ConstParamRef {
  std::string name;
  const Tensor<T>* tensor;
};

template <typename T>
struct MoeLayer {
  LayerConfig config;
  std::vector<GateLevel<T>> gates;  // empty when !config.gated
  Weights<T> weights;
  /// Optional per-level 0/1 masks multiplied into the coefficients before
  /// the expert-mode contractions; an empty vector means "no mask". A
  /// zero entry is exactly the same as zeroing that expert's weights.
  std::vector<std::vector<std::uint8_t>> expert_masks;

  /// Throws ShapeError when weights, gates or masks disagree with config.
  void validate() const;

  /// Learnable tensors in a fixed order: per level the gate matrix, then
  /// gamma / beta when normalized; then the expert weights.
  std::vector<ParamRef<T>> parameters();
  std::vector<ConstParamRef<T>> parameters() const;
  std::size_t parameter_count() const;
};

template <typename T>
struct GateCache {
  Mode mode = Mode::eval;
  Tensor<T> input;  // raw B x I
  std::vector<NormCache<T>> norm;
  std::vector<Tensor<T>> probs;  // activation outputs before masking
};

template <typename T>
struct MultilinearCache {
  ExpertCoefficients<T> coeffs;  // effective (masked) coefficients
  Tensor<T> input;               // folded B x I'
  /// CP: E + 1 projections of shape B x R (expert levels, then input).
  std::vector<Tensor<T>> cp_proj;
  /// TR: E + 1 per-row contracted cores of shape B x R_k x R_{k+1}, and
  /// the chained product B x R_1 x R_{E+2}.
  std::vector<Tensor<T>> tr_mats;
  Tensor<T> tr_chain;
};

template <typename T>
struct ForwardCache {
  GateCache<T> gate;
  MultilinearCache<T> multilinear;
};

/// Gradients for every tensor in MoeLayer::parameters() (same order) and
/// for the raw B x I input.
template <typename T>
struct LayerGrads {
  std::vector<Tensor<T>> params;
  Tensor<T> input;
};

template <typename T>
struct MultilinearGrads {
  std::vector<Tensor<T>> weights;            // same order as the weight parameters
  Tensor<T> input;                           // folded B x I'
  std::vector<Tensor<T>> coeffs;             // per level B x N_e
};

template <typename T>
struct GateGrads {
  std::vector<Tensor<T>> params;  // same order as the gate parameters
  Tensor<T> input;                // B x I
};

/// Appends a constant-1 column.
template <typename T>
Tensor<T> fold_bias(const Tensor<T>& z);

/// Per level: logits = Z G_e, normalize, simplex activation, mask.
template <typename T>
ExpertCoefficients<T> gate_coefficients(const MoeLayer<T>& layer, const Tensor<T>& z, Mode mode,
                                        GateCache<T>* cache = nullptr);

/// y_b = W x_1 a_1 ... x_E a_E x_{E+1} z_b on the materialized tensor.
template <typename T>
Tensor<T> dense_forward(const DenseWeights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                        MultilinearCache<T>* cache = nullptr);

/// y_b = sum_r u_out(r) prod_e (U_e a_e)_r (U_in z)_r without forming W.
template <typename T>
Tensor<T> cp_forward(const CpWeights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                     MultilinearCache<T>* cache = nullptr);

/// Contracts each core with its vector, chains the R_k x R_{k+1} results
/// and closes the ring against the output core.
template <typename T>
Tensor<T> tr_forward(const TrWeights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                     MultilinearCache<T>* cache = nullptr);

template <typename T>
Tensor<T> multilinear_forward(const Weights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                              MultilinearCache<T>* cache = nullptr);

template <typename T>
MultilinearGrads<T> multilinear_backward(const Weights<T>& w, const MultilinearCache<T>& cache,
                                         const Tensor<T>& upstream);

/// Gradient of the gating branch given dL/da for the effective (masked)
/// coefficients of every level.
template <typename T>
GateGrads<T> gate_backward(const MoeLayer<T>& layer, const GateCache<T>& cache,
                           const std::vector<Tensor<T>>& coeff_grads);

/// Full layer: gating from the raw input, then the multilinear map on the
/// (optionally bias-folded) input.
template <typename T>
Tensor<T> forward(const MoeLayer<T>& layer, const Tensor<T>& z, Mode mode, ForwardCache<T>* cache = nullptr);

/// Layer output for frozen coefficients (masks are applied to them).
template <typename T>
Tensor<T> forward_with_coefficients(const MoeLayer<T>& layer, const ExpertCoefficients<T>& coeffs,
                                    const Tensor<T>& z, MultilinearCache<T>* cache = nullptr);

template <typename T>
LayerGrads<T> backward(const MoeLayer<T>& layer, const ForwardCache<T>& cache, const Tensor<T>& upstream);

/// Folds the batch statistics of a training-mode forward into the layer.
template <typename T>
void commit_running_stats(MoeLayer<T>& layer, const GateCache<T>& cache);

/// The full N_1 x ... x N_E x I' x O tensor (masks ignored).
template <typename T>
Tensor<T> materialize_weights(const MoeLayer<T>& layer);

/// Expert matrix W_n (I' x O) for the multi-index `expert` (0-based, one
/// entry per level), computed directly from the factors.
template <typename T>
Tensor<T> materialize_expert(const MoeLayer<T>& layer, std::span<const std::size_t> expert);

}  // namespace mumoe
