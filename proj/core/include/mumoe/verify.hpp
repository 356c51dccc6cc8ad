#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mumoe {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::size_t cases = 0;
  double worst = 0.0;  // worst observed error (suite specific)
  std::string detail;
};

/// Self-contained oracle checks on random instances: factorized versus
/// materialized forward passes, finite-difference gradients, expert rank
/// bounds, ablation equivalence and simplex-activation properties.
std::vector<SuiteResult> run_verification(std::uint64_t seed = 0, std::size_t scale = 1);

}  // namespace mumoe
