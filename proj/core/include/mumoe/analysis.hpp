#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "mumoe/dataset.hpp"
#include "mumoe/model.hpp"
#include "mumoe/train.hpp"

namespace mumoe {

/// Copy of the model with expert n (0-based) of a single-level model
/// removed: its coefficient is masked to zero before the expert-mode
/// contraction, which by multilinearity equals zeroing W_n. In a block the
/// expert disappears from both layers. UsageError when E != 1 or n is out
/// of range.
template <typename T>
Model<T> ablate_expert(const Model<T>& model, std::size_t n);

/// Experimental multi-level variant: removes the whole slice of the expert
/// grid with index n at hierarchy level `level` (0-based).
template <typename T>
Model<T> ablate_expert_slice(const Model<T>& model, std::size_t level, std::size_t n);

/// d_c = (y_c - yhat_c) / y_c. Classes with y_c = 0 (including classes
/// without test support) are flagged undefined and left at 0.
struct DifferenceVector {
  std::vector<double> d;
  std::vector<std::uint8_t> defined;

  /// max |d_c| over defined classes exceeds 1e-12.
  bool nonzero() const;
};

DifferenceVector class_accuracy_diff(const ClassAccuracy& baseline, const ClassAccuracy& ablated);

template <typename T>
DifferenceVector class_accuracy_diff(const Model<T>& model, const Dataset& data, std::size_t n);

struct PolysemanticityScore {
  std::size_t argmax = 0;  // lowest index on ties
  double p = 0.0;
};

/// || d - onehot(argmax d) ||_2 over the defined classes only.
PolysemanticityScore polysemanticity_score(const DifferenceVector& d);
double polysemanticity_score(std::span<const double> d);

struct ExpertLoad {
  std::vector<std::size_t> counts;
  std::vector<std::size_t> dead;  // experts with a zero count
};

/// Rows whose coefficient for expert n is >= threshold (single level).
template <typename T>
ExpertLoad expert_load(const Tensor<T>& coefficients, double threshold = 0.5);

template <typename T>
ExpertLoad expert_load(const Model<T>& model, const Tensor<double>& inputs, double threshold = 0.5);

struct ExpertReportRow {
  std::size_t expert = 0;
  std::size_t argmax_class = 0;
  double p = 0.0;
  std::size_t load = 0;
  bool affects_accuracy = false;
};

struct PolysemanticityReport {
  std::vector<ExpertReportRow> rows;
  std::vector<DifferenceVector> differences;
  std::vector<std::size_t> undefined_classes;  // baseline accuracy 0
  double mean_p = 0.0;                         // over experts that affect accuracy
  std::size_t counted = 0;
};

/// Ablates every expert in turn and scores it on the test split; loads
/// are counted on the train split.
template <typename T>
PolysemanticityReport polysemanticity_report(const Model<T>& model, const Dataset& data, double threshold = 0.5);

/// Tab-separated: expert_index, argmax_class, p_score, load_count.
void write_report_tsv(std::ostream& out, const PolysemanticityReport& report);

/// Arithmetic mean of the single-level coefficient rows for `rows`.
template <typename T>
std::vector<double> mean_subpop_coefficients(const Model<T>& model, const Tensor<double>& inputs,
                                             std::span<const std::size_t> rows);

/// Adds lambda * <mean_coeffs, a> to output head `head`.
struct RewriteTerm {
  std::size_t head = 0;
  std::vector<double> mean_coeffs;
  double lambda = 0.0;
};

double rewrite_logit(double logit, const RewriteTerm& term, std::span<const double> a);

/// Model logits with the rewrite applied to every row; other heads are
/// returned untouched.
template <typename T>
Tensor<T> rewrite_logits(const Model<T>& model, const RewriteTerm& term, const Tensor<T>& z);

/// Truncates to k = ceil(keep_fraction * min(rows, cols)) singular triples.
template <typename T>
Tensor<T> svd_ablate(const Tensor<T>& m, double keep_fraction);

/// Every layer is materialized to dense kind and each expert matrix is
/// truncated with svd_ablate. Gating is kept as is.
template <typename T>
Model<T> svd_ablate_model(const Model<T>& model, double keep_fraction);

}  // namespace mumoe
