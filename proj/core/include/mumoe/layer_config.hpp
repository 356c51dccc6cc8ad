#pragma once

#include <string>
#include <vector>

#include "mumoe/activations.hpp"
#include "mumoe/norm.hpp"
#include "mumoe/tensor.hpp"

namespace mumoe {

enum class LayerKind { dense, cp, tr };

std::string to_string(LayerKind kind);
std::string to_string(GateActivation act);
std::string to_string(NormKind kind);
LayerKind parse_layer_kind(const std::string& text);
GateActivation parse_gate_activation(const std::string& text);
NormKind parse_norm_kind(const std::string& text);

/// Shape and routing description of one layer.
///
/// The implicit weight tensor has shape N_1 x ... x N_E x I' x O where
/// I' = I + 1 when `bias` is set (a constant 1 is appended to every
/// input row) and I' = I otherwise. Gating always sees the raw I inputs.
struct LayerConfig {
  LayerKind kind = LayerKind::cp;
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  std::vector<std::size_t> experts{1};  // one count per hierarchy level
  std::size_t cp_rank = 0;              // cp kind
  std::vector<std::size_t> tr_ranks;    // tr kind, E + 2 entries
  bool bias = false;
  GateActivation gate_activation = GateActivation::entmax15;
  NormKind gate_norm = NormKind::none;
  double norm_momentum = 0.1;
  double norm_eps = 1e-5;
  /// When false the layer owns no gating parameters and must be driven
  /// with externally supplied coefficients (the second layer of a block).
  bool gated = true;

  std::size_t levels() const { return experts.size(); }
  std::size_t folded_input_dim() const { return input_dim + (bias ? 1 : 0); }
  std::size_t total_experts() const;
  /// N_1, ..., N_E, I', O
  Shape weight_shape() const;
  /// Throws ConfigError when any dimension or rank is invalid.
  void validate() const;

  bool operator==(const LayerConfig&) const = default;
};

}  // namespace mumoe
