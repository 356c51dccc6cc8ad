#include "mumoe/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mumoe/svd.hpp"

namespace mumoe {

namespace {

template <typename T>
void mask_first_layer(Model<T>& m, std::size_t level, std::size_t n) {
  auto& layer = m.first;
  const auto& experts = layer.config.experts;
  if (level >= experts.size()) throw UsageError("hierarchy level " + std::to_string(level) + " out of range");
  if (n >= experts[level])
    throw UsageError("expert " + std::to_string(n) + " out of range (N=" + std::to_string(experts[level]) + ")");
  if (layer.expert_masks.empty()) layer.expert_masks.assign(experts.size(), {});
  auto& mask = layer.expert_masks[level];
  if (mask.empty()) mask.assign(experts[level], 1);
  mask[n] = 0;
}

template <typename T>
const Tensor<T>& single_level(const ExpertCoefficients<T>& c) {
  if (c.levels.size() != 1) throw UsageError("operation needs single-level gating");
  return c.levels.front();
}

}  // namespace

template <typename T>
Model<T> ablate_expert(const Model<T>& model, std::size_t n) {
  if (model.first.config.levels() != 1)
    throw UsageError("ablate_expert needs a single-level model; use ablate_expert_slice");
  Model<T> out = model;
  mask_first_layer(out, 0, n);
  return out;
}

template <typename T>
Model<T> ablate_expert_slice(const Model<T>& model, std::size_t level, std::size_t n) {
  Model<T> out = model;
  mask_first_layer(out, level, n);
  return out;
}

bool DifferenceVector::nonzero() const {
  for (std::size_t c = 0; c < d.size(); ++c)
    if (defined[c] && std::abs(d[c]) > 1e-12) return true;
  return false;
}

DifferenceVector class_accuracy_diff(const ClassAccuracy& baseline, const ClassAccuracy& ablated) {
  if (baseline.accuracy.size() != ablated.accuracy.size()) throw ShapeError("class counts differ");
  DifferenceVector out;
  for (std::size_t c = 0; c < baseline.accuracy.size(); ++c) {
    const double y = baseline.accuracy[c];
    const bool ok = baseline.support[c] > 0 && y > 0.0;
    out.defined.push_back(ok);
    out.d.push_back(ok ? (y - ablated.accuracy[c]) / y : 0.0);
  }
  return out;
}

template <typename T>
DifferenceVector class_accuracy_diff(const Model<T>& model, const Dataset& data, std::size_t n) {
  return class_accuracy_diff(evaluate_per_class(model, data), evaluate_per_class(ablate_expert(model, n), data));
}

PolysemanticityScore polysemanticity_score(const DifferenceVector& d) {
  PolysemanticityScore s;
  bool found = false;
  for (std::size_t c = 0; c < d.d.size(); ++c) {
    if (!d.defined[c]) continue;
    if (!found || d.d[c] > d.d[s.argmax]) s.argmax = c;
    found = true;
  }
  if (!found) return s;
  double sq = 0.0;
  for (std::size_t c = 0; c < d.d.size(); ++c) {
    if (!d.defined[c]) continue;
    const double diff = d.d[c] - (c == s.argmax ? 1.0 : 0.0);
    sq += diff * diff;
  }
  s.p = std::sqrt(sq);
  return s;
}

double polysemanticity_score(std::span<const double> d) {
  DifferenceVector v{{d.begin(), d.end()}, std::vector<std::uint8_t>(d.size(), 1)};
  return polysemanticity_score(v).p;
}

template <typename T>
ExpertLoad expert_load(const Tensor<T>& coefficients, double threshold) {
  if (coefficients.order() != 2) throw ShapeError("expert_load expects a B x N coefficient matrix");
  ExpertLoad load;
  load.counts.assign(coefficients.cols(), 0);
  for (std::size_t b = 0; b < coefficients.rows(); ++b)
    for (std::size_t n = 0; n < coefficients.cols(); ++n)
      if (double(coefficients(b, n)) >= threshold) ++load.counts[n];
  for (std::size_t n = 0; n < load.counts.size(); ++n)
    if (load.counts[n] == 0) load.dead.push_back(n);
  return load;
}

template <typename T>
ExpertLoad expert_load(const Model<T>& model, const Tensor<double>& inputs, double threshold) {
  const auto coeffs = model_coefficients(model, inputs_as<T>(inputs));
  return expert_load(single_level(coeffs), threshold);
}

template <typename T>
PolysemanticityReport polysemanticity_report(const Model<T>& model, const Dataset& data, double threshold) {
  PolysemanticityReport report;
  const ClassAccuracy base = evaluate_per_class(model, data);
  for (std::size_t c = 0; c < base.accuracy.size(); ++c)
    if (base.support[c] == 0 || base.accuracy[c] == 0.0) report.undefined_classes.push_back(c);
  const Dataset train_set = data.train_split();
  const ExpertLoad load = train_set.size() ? expert_load(model, train_set.inputs, threshold)
                                           : ExpertLoad{std::vector<std::size_t>(model.first.config.experts[0]), {}};
  const std::size_t experts = model.first.config.experts.at(0);
  double sum = 0.0;
  for (std::size_t n = 0; n < experts; ++n) {
    DifferenceVector d = class_accuracy_diff(base, evaluate_per_class(ablate_expert(model, n), data));
    const PolysemanticityScore s = polysemanticity_score(d);
    ExpertReportRow row{n, s.argmax, s.p, load.counts[n], d.nonzero()};
    if (row.affects_accuracy) {
      sum += s.p;
      ++report.counted;
    }
    report.rows.push_back(row);
    report.differences.push_back(std::move(d));
  }
  report.mean_p = report.counted ? sum / double(report.counted) : 0.0;
  return report;
}

void write_report_tsv(std::ostream& out, const PolysemanticityReport& report) {
  out << "expert_index\targmax_class\tp_score\tload_count\n";
  for (const auto& r : report.rows) {
    out << r.expert << '\t';
    if (r.affects_accuracy) out << r.argmax_class << '\t' << r.p;
    else out << "-\t-";
    out << '\t' << r.load << '\n';
  }
}

template <typename T>
std::vector<double> mean_subpop_coefficients(const Model<T>& model, const Tensor<double>& inputs,
                                             std::span<const std::size_t> rows) {
  if (rows.empty()) throw UsageError("mean_subpop_coefficients needs a nonempty subset");
  const std::size_t f = inputs.cols();
  Tensor<T> z({rows.size(), f});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= inputs.rows()) throw UsageError("subset row out of range");
    for (std::size_t i = 0; i < f; ++i) z(k, i) = static_cast<T>(inputs(rows[k], i));
  }
  const auto coeffs = model_coefficients(model, z);
  const Tensor<T>& a = single_level(coeffs);
  std::vector<double> mean(a.cols(), 0.0);
  for (std::size_t b = 0; b < a.rows(); ++b)
    for (std::size_t n = 0; n < a.cols(); ++n) mean[n] += double(a(b, n));
  for (auto& m : mean) m /= double(a.rows());
  return mean;
}

double rewrite_logit(double logit, const RewriteTerm& term, std::span<const double> a) {
  if (a.size() != term.mean_coeffs.size()) throw ShapeError("rewrite coefficient length mismatch");
  double dot = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) dot += term.mean_coeffs[n] * a[n];
  return logit + term.lambda * dot;
}

template <typename T>
Tensor<T> rewrite_logits(const Model<T>& model, const RewriteTerm& term, const Tensor<T>& z) {
  if (term.head >= model.output_dim())
    throw UsageError("rewrite head " + std::to_string(term.head) + " out of range");
  const auto coeffs = model_coefficients(model, z);
  const Tensor<T>& a = single_level(coeffs);
  Tensor<T> y = model_forward_with_coefficients(model, coeffs, z);
  std::vector<double> row(a.cols());
  for (std::size_t b = 0; b < y.rows(); ++b) {
    for (std::size_t n = 0; n < a.cols(); ++n) row[n] = double(a(b, n));
    y(b, term.head) = static_cast<T>(rewrite_logit(double(y(b, term.head)), term, row));
  }
  return y;
}

template <typename T>
Tensor<T> svd_ablate(const Tensor<T>& m, double keep_fraction) {
  if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw UsageError("keep fraction must lie in [0, 1]");
  const std::size_t full = std::min(m.rows(), m.cols());
  const auto k = static_cast<std::size_t>(std::ceil(keep_fraction * double(full) - 1e-12));
  if (k == 0) return Tensor<T>(m.shape());
  if (k >= full) return m;
  return truncate(m, k);
}

namespace {

template <typename T>
MoeLayer<T> svd_ablate_layer(const MoeLayer<T>& layer, double keep_fraction) {
  MoeLayer<T> out = layer;
  out.config.kind = LayerKind::dense;
  out.config.cp_rank = 0;
  out.config.tr_ranks.clear();
  Tensor<T> w = materialize_weights(layer);
  const std::size_t in = layer.config.folded_input_dim(), o = layer.config.output_dim;
  const std::size_t cells = layer.config.total_experts();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    Tensor<T> slice({in, o});
    std::copy_n(w.data().begin() + cell * in * o, in * o, slice.data().begin());
    const Tensor<T> cut = svd_ablate(slice, keep_fraction);
    std::copy_n(cut.data().begin(), in * o, w.data().begin() + cell * in * o);
  }
  out.weights = DenseWeights<T>{std::move(w)};
  return out;
}

}  // namespace

template <typename T>
Model<T> svd_ablate_model(const Model<T>& model, double keep_fraction) {
  Model<T> out = model;
  out.first = svd_ablate_layer(model.first, keep_fraction);
  if (model.second) out.second = svd_ablate_layer(*model.second, keep_fraction);
  return out;
}

#define MUMOE_INSTANTIATE(T)                                                                                    \
  template Model<T> ablate_expert(const Model<T>&, std::size_t);                                                \
  template Model<T> ablate_expert_slice(const Model<T>&, std::size_t, std::size_t);                             \
  template DifferenceVector class_accuracy_diff(const Model<T>&, const Dataset&, std::size_t);                  \
  template ExpertLoad expert_load(const Tensor<T>&, double);                                                    \
  template ExpertLoad expert_load(const Model<T>&, const Tensor<double>&, double);                              \
  template PolysemanticityReport polysemanticity_report(const Model<T>&, const Dataset&, double);               \
  template std::vector<double> mean_subpop_coefficients(const Model<T>&, const Tensor<double>&,                 \
                                                        std::span<const std::size_t>);                          \
  template Tensor<T> rewrite_logits(const Model<T>&, const RewriteTerm&, const Tensor<T>&);                     \
  template Tensor<T> svd_ablate(const Tensor<T>&, double);                                                      \
  template Model<T> svd_ablate_model(const Model<T>&, double);

MUMOE_INSTANTIATE(float)
MUMOE_INSTANTIATE(double)

#undef MUMOE_INSTANTIATE

}  // namespace mumoe
