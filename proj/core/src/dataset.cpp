#include "mumoe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

namespace mumoe {

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (inputs.order() != 2 || inputs.rows() != n)
    throw ShapeError("dataset has " + std::to_string(n) + " labels but inputs " + shape_string(inputs.shape()));
  if (!tags.empty() && tags.size() != n) throw ShapeError("dataset tag count differs from label count");
  if (test.size() != n) throw ShapeError("dataset split markers differ from label count");
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= classes)
      throw DomainError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

Dataset Dataset::rows(std::span<const std::size_t> idx) const {
  Dataset out;
  out.classes = classes;
  const std::size_t f = features();
  if (!idx.empty()) out.inputs = Tensor<double>({idx.size(), f});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const std::size_t r = idx[k];
    if (r >= size()) throw UsageError("dataset row " + std::to_string(r) + " out of range");
    std::copy_n(inputs.row(r).begin(), f, out.inputs.row(k).begin());
    out.labels.push_back(labels[r]);
    if (has_tags()) out.tags.push_back(tags[r]);
    out.test.push_back(test[r]);
  }
  return out;
}

std::vector<std::size_t> Dataset::split_rows(bool test_split) const {
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < size(); ++r)
    if (bool(test[r]) == test_split) idx.push_back(r);
  return idx;
}

void stratified_split(Dataset& data, double test_fraction, std::uint64_t seed) {
  std::map<std::pair<int, int>, std::vector<std::size_t>> groups;
  for (std::size_t r = 0; r < data.size(); ++r)
    groups[{data.labels[r], data.has_tags() ? data.tags[r] : 0}].push_back(r);
  data.test.assign(data.size(), 0);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  for (auto& [key, members] : groups) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(members.size())));
    for (std::size_t k = 0; k < n_test; ++k) data.test[members[k]] = 1;
  }
}

Dataset gen_synthetic(const SyntheticClusterSpec& spec) {
  if (spec.classes == 0 || spec.clusters_per_class == 0 || spec.input_dim == 0)
    throw ConfigError("synthetic data needs classes, clusters and input_dim >= 1");
  if (spec.spread < 0.0 || spec.separation < 0.0) throw ConfigError("spread and separation must be >= 0");
  const std::size_t clusters = spec.classes * spec.clusters_per_class;
  std::vector<std::size_t> counts = spec.cluster_counts;
  if (counts.empty()) {
    for (std::size_t c = 0; c < spec.classes; ++c)
      for (std::size_t k = 0; k < spec.clusters_per_class; ++k)
        counts.push_back(spec.samples_per_class / spec.clusters_per_class +
                         (k < spec.samples_per_class % spec.clusters_per_class ? 1 : 0));
  }
  if (counts.size() != clusters)
    throw ConfigError("cluster_counts needs " + std::to_string(clusters) + " entries");
  if (spec.minority_cluster && *spec.minority_cluster >= clusters) throw ConfigError("minority_cluster out of range");
  if (spec.minority_ratio == 0) throw ConfigError("minority_ratio must be >= 1");
  if (spec.near_cluster && (!spec.minority_cluster || *spec.near_cluster >= clusters ||
                            *spec.near_cluster == *spec.minority_cluster))
    throw ConfigError("near_cluster needs a different, valid minority_cluster");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> centres(clusters, std::vector<double>(spec.input_dim));
  for (auto& c : centres)
    for (auto& v : c) v = spec.offset + spec.separation * normal(rng);
  if (spec.near_cluster) {
    const auto& anchor = centres[*spec.near_cluster];
    auto& moved = centres[*spec.minority_cluster];
    double norm = 0.0;
    for (std::size_t i = 0; i < spec.input_dim; ++i) norm += (moved[i] - anchor[i]) * (moved[i] - anchor[i]);
    norm = std::sqrt(norm);
    if (norm == 0.0) throw ConfigError("minority and near cluster share a centre");
    for (std::size_t i = 0; i < spec.input_dim; ++i)
      moved[i] = anchor[i] + spec.near_distance * (moved[i] - anchor[i]) / norm;
  }

  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total == 0) throw ConfigError("synthetic data has no samples");
  Dataset data;
  data.classes = spec.classes;
  data.inputs = Tensor<double>({total, spec.input_dim});
  std::size_t row = 0;
  for (std::size_t k = 0; k < clusters; ++k)
    for (std::size_t s = 0; s < counts[k]; ++s, ++row) {
      for (std::size_t i = 0; i < spec.input_dim; ++i)
        data.inputs(row, i) = centres[k][i] + spec.spread * normal(rng);
      data.labels.push_back(int(k / spec.clusters_per_class));
      data.tags.push_back(int(k));
    }
  stratified_split(data, 0.2, spec.seed);
  if (!spec.minority_cluster || spec.minority_ratio == 1) return data;
  std::vector<std::size_t> keep;
  std::size_t seen = 0;
  for (std::size_t r = 0; r < data.size(); ++r) {
    if (!data.test[r] && std::size_t(data.tags[r]) == *spec.minority_cluster && seen++ % spec.minority_ratio != 0)
      continue;
    keep.push_back(r);
  }
  return data.rows(keep);
}

}  // namespace mumoe
