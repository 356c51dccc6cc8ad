#pragma once

#include <cstdint>
#include <vector>

#include "mumoe/layer_config.hpp"
#include "mumoe/moe_layer.hpp"

namespace mumoe {

struct InitConfig {
  std::uint64_t seed = 0;
  /// Spread of the expert-mode factors per level. Missing entries default
  /// to 1 for the first level and 0 for deeper ones.
  std::vector<double> sigma;

  double sigma_for(std::size_t level) const;
};

/// Random layer for `config`.
///
/// Gates are drawn first (level order), then the weights:
///  - cp: expert factors ~ N(1, sigma_e), input factor ~ U(+-sqrt(1/I')),
///    output factor ~ U(+-sqrt(1/R)).
///  - tr: expert cores hold diagonal lateral slices with N(1, sigma_e)
///    entries, input core ~ U(+-sqrt(1/I')), output core
///    ~ U(+-sqrt(1/(R_1 R_{E+2}))).
///  - dense: one base matrix ~ U(+-sqrt(1/I')) replicated over the expert
///    grid, expert n scaled by prod_e s_e(n_e) with s_e ~ N(1, sigma_e).
/// Gating matrices ~ U(+-sqrt(1/I)); norm gamma = 1, beta = 0.
template <typename T>
MoeLayer<T> init_layer(const LayerConfig& config, const InitConfig& init);

}  // namespace mumoe
