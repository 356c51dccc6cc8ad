#include "mumoe/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mumoe {

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.order() != 2 || logits.rows() != labels.size())
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t batch = logits.rows(), classes = logits.cols();
  LossResult<T> out;
  out.grad = Tensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    if (y < 0 || std::size_t(y) >= classes) throw DomainError("label " + std::to_string(y) + " out of range");
    double mx = double(logits(b, 0));
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, double(logits(b, c)));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(double(logits(b, c)) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - double(logits(b, std::size_t(y)));
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(double(logits(b, c)) - log_z);
      out.grad(b, c) = static_cast<T>((p - (std::size_t(y) == c ? 1.0 : 0.0)) / double(batch));
    }
  }
  out.loss = total / double(batch);
  return out;
}

template LossResult<float> cross_entropy(const Tensor<float>&, std::span<const int>);
template LossResult<double> cross_entropy(const Tensor<double>&, std::span<const int>);

}  // namespace mumoe
