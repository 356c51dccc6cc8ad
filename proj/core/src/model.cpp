#include "mumoe/model.hpp"

namespace mumoe {

template <typename T>
void Model<T>::validate() const {
  first.validate();
  if (!first.config.gated) throw ShapeError("the first layer must own the gating");
  if (!second) return;
  second->validate();
  if (second->config.gated) throw ShapeError("the second block layer must be ungated");
  if (second->config.input_dim != first.config.output_dim)
    throw ShapeError("block layers do not chain: " + std::to_string(first.config.output_dim) + " -> " +
                     std::to_string(second->config.input_dim));
  if (second->config.experts != first.config.experts) throw ShapeError("block layers disagree on expert counts");
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (auto& p : first.parameters()) out.push_back({"layer1." + p.name, p.tensor});
  if (second)
    for (auto& p : second->parameters()) out.push_back({"layer2." + p.name, p.tensor});
  return out;
}

template <typename T>
std::vector<ConstParamRef<T>> Model<T>::parameters() const {
  std::vector<ConstParamRef<T>> out;
  for (auto& p : const_cast<Model<T>*>(this)->parameters()) out.push_back({std::move(p.name), p.tensor});
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  return first.parameter_count() + (second ? second->parameter_count() : 0);
}

template <typename T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& z, Mode mode, ModelCache<T>* cache) {
  if (!model.second) return forward(model.first, z, mode, cache ? &cache->first : nullptr);
  ForwardCache<T> local;
  ForwardCache<T>& fc = cache ? cache->first : local;
  Tensor<T> h = forward(model.first, z, mode, &fc);
  Tensor<T> act = pointwise(model.hidden, h);
  // fc.multilinear.coeffs already carries the masks of the first layer.
  Tensor<T> y = forward_with_coefficients(*model.second, fc.multilinear.coeffs, act,
                                          cache ? &cache->second : nullptr);
  if (cache) cache->hidden_pre = std::move(h);
  return y;
}

template <typename T>
ModelGrads<T> model_backward(const Model<T>& model, const ModelCache<T>& cache, const Tensor<T>& upstream) {
  if (!model.second) {
    LayerGrads<T> g = backward(model.first, cache.first, upstream);
    return {std::move(g.params), std::move(g.input)};
  }
  const MoeLayer<T>& l1 = model.first;
  const MoeLayer<T>& l2 = *model.second;
  MultilinearGrads<T> g2 = multilinear_backward(l2.weights, cache.second, upstream);

  const Tensor<T>& h = cache.hidden_pre;
  if (h.empty()) throw UsageError("block backward needs a cache from a block forward");
  Tensor<T> dh(h.shape());
  for (std::size_t b = 0; b < h.rows(); ++b)
    for (std::size_t j = 0; j < h.cols(); ++j)
      dh(b, j) = static_cast<T>(double(g2.input(b, j)) * pointwise_derivative(model.hidden, double(h(b, j))));

  MultilinearGrads<T> g1 = multilinear_backward(l1.weights, cache.first.multilinear, dh);
  std::vector<Tensor<T>> dcoeffs = std::move(g1.coeffs);
  for (std::size_t e = 0; e < dcoeffs.size(); ++e)
    for (std::size_t k = 0; k < dcoeffs[e].size(); ++k)
      dcoeffs[e][k] = static_cast<T>(double(dcoeffs[e][k]) + double(g2.coeffs[e][k]));
  GateGrads<T> gg = gate_backward(l1, cache.first.gate, dcoeffs);

  ModelGrads<T> out;
  out.input = gg.input;
  for (std::size_t b = 0; b < out.input.rows(); ++b)
    for (std::size_t i = 0; i < out.input.cols(); ++i)
      out.input(b, i) = static_cast<T>(double(out.input(b, i)) + double(g1.input(b, i)));
  for (auto& p : gg.params) out.params.push_back(std::move(p));
  for (auto& p : g1.weights) out.params.push_back(std::move(p));
  for (auto& p : g2.weights) out.params.push_back(std::move(p));
  return out;
}

template <typename T>
ExpertCoefficients<T> model_coefficients(const Model<T>& model, const Tensor<T>& z, Mode mode) {
  return gate_coefficients(model.first, z, mode);
}

template <typename T>
Tensor<T> model_forward_with_coefficients(const Model<T>& model, const ExpertCoefficients<T>& coeffs,
                                          const Tensor<T>& z) {
  MultilinearCache<T> mc;
  Tensor<T> h = forward_with_coefficients(model.first, coeffs, z, &mc);
  if (!model.second) return h;
  return forward_with_coefficients(*model.second, mc.coeffs, pointwise(model.hidden, h));
}

template <typename T>
void commit_running_stats(Model<T>& model, const ModelCache<T>& cache) {
  commit_running_stats(model.first, cache.first.gate);
}

#define MUMOE_INSTANTIATE(T)                                                                               \
  template struct Model<T>;                                                                                \
  template Tensor<T> model_forward(const Model<T>&, const Tensor<T>&, Mode, ModelCache<T>*);               \
  template ModelGrads<T> model_backward(const Model<T>&, const ModelCache<T>&, const Tensor<T>&);          \
  template ExpertCoefficients<T> model_coefficients(const Model<T>&, const Tensor<T>&, Mode);              \
  template Tensor<T> model_forward_with_coefficients(const Model<T>&, const ExpertCoefficients<T>&,        \
                                                     const Tensor<T>&);                                    \
  template void commit_running_stats(Model<T>&, const ModelCache<T>&);

MUMOE_INSTANTIATE(float)
MUMOE_INSTANTIATE(double)

#undef MUMOE_INSTANTIATE

}  // namespace mumoe
