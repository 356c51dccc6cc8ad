#pragma once

#include <cstdint>

#include "mumoe/layer_config.hpp"

namespace mumoe {

/// Stored scalars of a layer built from a config, split by role.
struct ParamBreakdown {
  std::uint64_t weights = 0;  // dense tensor, cp factors or tr cores
  std::uint64_t gating = 0;   // sum_e I * N_e (0 for an ungated layer)
  std::uint64_t norm = 0;     // gamma and beta per level when normalized

  std::uint64_t total() const { return weights + gating + norm; }
};

/// cp:    R (sum_e N_e + I' + O)
/// tr:    sum_e R_e N_e R_{e+1} + R_{E+1} I' R_{E+2} + R_{E+2} O R_1
/// dense: prod_e N_e * I' * O
ParamBreakdown param_count(const LayerConfig& config);

/// Multiply-adds of the factorized forward pass for one sample (gating
/// excluded).
/// cp:    R (sum_e N_e + I' + O)
/// tr:    sum_e R_e N_e R_{e+1} + R_{E+1} I' R_{E+2}
///        + sum_{k=2}^{E+1} R_1 R_k R_{k+1} + R_1 O R_{E+2}
/// dense: prod_e N_e * I' * O
std::uint64_t flop_estimate(const LayerConfig& config);

/// Multiply-adds when the full weight tensor is first materialized from
/// its factors and then contracted (dense: contraction only). cp builds
/// every element as an R-term sum; tr merges cores left to right and then
/// closes the ring against the output core.
std::uint64_t naive_flop_estimate(const LayerConfig& config);

/// Upper bound on the rank of any single expert matrix.
/// cp: min(R, I', O); tr: min(R_{E+2} min(R_1..R_{E+1}), I', O);
/// dense: min(I', O).
std::uint64_t rank_bound(const LayerConfig& config);

}  // namespace mumoe
