#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <type_traits>
#include <vector>

#include "mumoe/tensor.hpp"

namespace mumoe {

struct Dataset {
  Tensor<double> inputs;          // rows x features
  std::vector<int> labels;        // in [0, classes)
  std::vector<int> tags;          // optional subpopulation ids; empty when absent
  std::vector<std::uint8_t> test; // 1 marks a test row
  std::size_t classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t features() const { return inputs.empty() ? 0 : inputs.cols(); }
  bool has_tags() const { return !tags.empty(); }

  /// Throws ShapeError / DomainError when the fields disagree.
  void validate() const;

  Dataset rows(std::span<const std::size_t> idx) const;
  std::vector<std::size_t> split_rows(bool test_split) const;
  Dataset train_split() const { return rows(split_rows(false)); }
  Dataset test_split() const { return rows(split_rows(true)); }
};

/// Gaussian clusters: every class owns `clusters_per_class` centres drawn
/// as offset + separation * N(0, I); points are centre + spread * N(0, I). Each row
/// is tagged with its global cluster id (class * clusters_per_class + k).
struct SyntheticClusterSpec {
  std::size_t classes = 4;
  std::size_t clusters_per_class = 1;
  std::size_t input_dim = 8;
  double spread = 1.0;
  double separation = 4.0;
  double offset = 0.0;  // added to every centre coordinate
  std::size_t samples_per_class = 100;  // split evenly over the class's clusters
  /// Optional explicit per-cluster sample counts (classes * clusters_per_class
  /// entries); overrides samples_per_class, e.g. to undersample one cluster.
  std::vector<std::size_t> cluster_counts;
  /// Biased variant: the minority cluster keeps one in `minority_ratio` of
  /// its training rows (test rows untouched). With `near_cluster` set its
  /// centre is moved to `near_distance` from that cluster's centre.
  std::optional<std::size_t> minority_cluster;
  std::size_t minority_ratio = 20;
  std::optional<std::size_t> near_cluster;
  double near_distance = 3.0;
  std::uint64_t seed = 0;
};

/// Deterministic in the seed. The 80/20 split is stratified by (label, tag)
/// and taken before any undersampling.
Dataset gen_synthetic(const SyntheticClusterSpec& spec);

/// Marks round(fraction * n) rows of every (label, tag) group as test,
/// choosing them with a seeded permutation.
void stratified_split(Dataset& data, double test_fraction, std::uint64_t seed);

template <typename T>
Tensor<T> inputs_as(const Tensor<double>& x) {
  if constexpr (std::is_same_v<T, double>) return x;
  else return tensor_cast<T>(x);
}

}  // namespace mumoe
