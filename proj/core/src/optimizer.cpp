#include "mumoe/optimizer.hpp"

#include <cmath>

namespace mumoe {

std::string to_string(OptimKind kind) { return kind == OptimKind::adam ? "adam" : "sgd_momentum"; }

OptimKind parse_optim_kind(const std::string& text) {
  if (text == "adam") return OptimKind::adam;
  if (text == "sgd_momentum" || text == "sgd") return OptimKind::sgd_momentum;
  throw ConfigError("unknown optimizer '" + text + "' (expected adam or sgd_momentum)");
}

void OptimConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
}

template <typename T>
void optimizer_step(OptimState<T>& state, std::span<const ParamRef<T>> params, std::span<const Tensor<T>> grads) {
  if (params.size() != grads.size())
    throw ShapeError(std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) + " gradients");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].tensor->shape() != grads[k].shape())
      throw ShapeError("gradient for " + params[k].name + " has shape " + shape_string(grads[k].shape()));
  if (state.slot1.empty()) {
    for (const auto& p : params) {
      state.slot1.emplace_back(p.tensor->shape());
      if (state.config.kind == OptimKind::adam) state.slot2.emplace_back(p.tensor->shape());
    }
  }
  if (state.slot1.size() != params.size()) throw ShapeError("optimizer state was built for other parameters");
  for (std::size_t k = 0; k < params.size(); ++k)
    if (state.slot1[k].shape() != params[k].tensor->shape())
      throw ShapeError("optimizer slot shape differs for " + params[k].name);

  ++state.step;
  const OptimConfig& c = state.config;
  const double bc1 = 1.0 - std::pow(c.beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, double(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = *params[k].tensor;
    const Tensor<T>& g = grads[k];
    Tensor<T>& m = state.slot1[k];
    if (c.kind == OptimKind::sgd_momentum) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double v = c.momentum * double(m[i]) + double(g[i]);
        m[i] = static_cast<T>(v);
        p[i] = static_cast<T>(double(p[i]) - c.lr * v);
      }
    } else {
      Tensor<T>& s = state.slot2[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = double(g[i]);
        const double m1 = c.beta1 * double(m[i]) + (1.0 - c.beta1) * gi;
        const double m2 = c.beta2 * double(s[i]) + (1.0 - c.beta2) * gi * gi;
        m[i] = static_cast<T>(m1);
        s[i] = static_cast<T>(m2);
        p[i] = static_cast<T>(double(p[i]) - c.lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + c.eps));
      }
    }
  }
}

template void optimizer_step(OptimState<float>&, std::span<const ParamRef<float>>, std::span<const Tensor<float>>);
template void optimizer_step(OptimState<double>&, std::span<const ParamRef<double>>,
                             std::span<const Tensor<double>>);

}  // namespace mumoe
