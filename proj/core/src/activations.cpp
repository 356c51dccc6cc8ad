#include "mumoe/activations.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

namespace mumoe {

template <typename T>
std::vector<T> entmax15(std::span<const T> logits) {
  const std::size_t n = logits.size();
  if (n == 0) throw ShapeError("entmax15 on an empty vector");
  for (auto z : logits)
    if (!std::isfinite(double(z))) throw DomainError("entmax15: non-finite logit");

  // Work on x = (z - max) / 2; the threshold absorbs the shift.
  const double zmax = double(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = (double(logits[i]) - zmax) / 2.0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });

  // For each candidate support size k, tau_k solves sum_{j<=k} (x_j - tau)^2 = 1
  // taking the smaller root. The support is the largest k with tau_k <= x_(k).
  double sum = 0.0, sum_sq = 0.0;
  double tau_star = 0.0;
  for (std::size_t k = 1; k <= n; ++k) {
    const double xk = x[order[k - 1]];
    sum += xk;
    sum_sq += xk * xk;
    const double kd = double(k);
    const double mean = sum / kd;
    const double ss = sum_sq - kd * mean * mean;
    const double delta = std::max(0.0, (1.0 - ss) / kd);
    const double tau = mean - std::sqrt(delta);
    if (tau <= xk) tau_star = tau;
    else break;
  }

  std::vector<double> q(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = std::max(0.0, x[i] - tau_star);
    q[i] = t * t;
  }
  // The closed form is exact up to rounding; renormalise the last ulps.
  // Summing in sorted order keeps the result exactly permutation-equivariant.
  double total = 0.0;
  for (auto i : order) total += q[i];
  std::vector<T> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(q[i] / total);
  return p;
}

template <typename T>
std::vector<T> entmax15_vjp(std::span<const T> probs, std::span<const T> upstream) {
  if (probs.size() != upstream.size()) throw ShapeError("entmax15_vjp length mismatch");
  const std::size_t n = probs.size();
  std::vector<double> s(n);
  double s_sum = 0.0, su_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = probs[i] > T{0} ? std::sqrt(double(probs[i])) : 0.0;
    s_sum += s[i];
    su_sum += s[i] * double(upstream[i]);
  }
  const double q = s_sum > 0.0 ? su_sum / s_sum : 0.0;
  std::vector<T> grad(n);
  for (std::size_t i = 0; i < n; ++i) grad[i] = static_cast<T>(s[i] * double(upstream[i]) - q * s[i]);
  return grad;
}

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  const std::size_t n = logits.size();
  if (n == 0) throw ShapeError("softmax on an empty vector");
  for (auto z : logits)
    if (!std::isfinite(double(z))) throw DomainError("softmax: non-finite logit");
  const double zmax = double(*std::max_element(logits.begin(), logits.end()));
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::exp(double(logits[i]) - zmax);
  std::vector<double> sorted(e);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  std::vector<T> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(e[i] / total);
  return p;
}

template <typename T>
std::vector<T> softmax_vjp(std::span<const T> probs, std::span<const T> upstream) {
  if (probs.size() != upstream.size()) throw ShapeError("softmax_vjp length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += double(probs[i]) * double(upstream[i]);
  std::vector<T> grad(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i)
    grad[i] = static_cast<T>(double(probs[i]) * (double(upstream[i]) - dot));
  return grad;
}

template <typename T>
Tensor<T> simplex_rows(GateActivation kind, const Tensor<T>& logits) {
  if (logits.order() != 2) throw ShapeError("simplex_rows needs a matrix");
  Tensor<T> out(logits.shape());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    const auto p = kind == GateActivation::entmax15 ? entmax15<T>(logits.row(b)) : softmax<T>(logits.row(b));
    std::copy(p.begin(), p.end(), out.row(b).begin());
  }
  return out;
}

template <typename T>
Tensor<T> simplex_rows_vjp(GateActivation kind, const Tensor<T>& probs, const Tensor<T>& upstream) {
  if (probs.shape() != upstream.shape()) throw ShapeError("simplex_rows_vjp shape mismatch");
  Tensor<T> out(probs.shape());
  for (std::size_t b = 0; b < probs.rows(); ++b) {
    const auto g = kind == GateActivation::entmax15 ? entmax15_vjp<T>(probs.row(b), upstream.row(b))
                                                    : softmax_vjp<T>(probs.row(b), upstream.row(b));
    std::copy(g.begin(), g.end(), out.row(b).begin());
  }
  return out;
}

double pointwise(Pointwise kind, double x) {
  switch (kind) {
    case Pointwise::identity: return x;
    case Pointwise::relu: return x > 0.0 ? x : 0.0;
    case Pointwise::gelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
  }
  return x;
}

double pointwise_derivative(Pointwise kind, double x) {
  switch (kind) {
    case Pointwise::identity: return 1.0;
    case Pointwise::relu: return x > 0.0 ? 1.0 : 0.0;
    case Pointwise::gelu: {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
      return cdf + x * pdf;
    }
  }
  return 1.0;
}

template <typename T>
Tensor<T> pointwise(Pointwise kind, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (std::size_t k = 0; k < x.size(); ++k) out[k] = static_cast<T>(pointwise(kind, double(x[k])));
  return out;
}

template std::vector<float> entmax15(std::span<const float>);
template std::vector<double> entmax15(std::span<const double>);
template std::vector<float> entmax15_vjp(std::span<const float>, std::span<const float>);
template std::vector<double> entmax15_vjp(std::span<const double>, std::span<const double>);
template std::vector<float> softmax(std::span<const float>);
template std::vector<double> softmax(std::span<const double>);
template std::vector<float> softmax_vjp(std::span<const float>, std::span<const float>);
template std::vector<double> softmax_vjp(std::span<const double>, std::span<const double>);
template Tensor<float> simplex_rows(GateActivation, const Tensor<float>&);
template Tensor<double> simplex_rows(GateActivation, const Tensor<double>&);
template Tensor<float> simplex_rows_vjp(GateActivation, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> simplex_rows_vjp(GateActivation, const Tensor<double>&, const Tensor<double>&);
template Tensor<float> pointwise(Pointwise, const Tensor<float>&);
template Tensor<double> pointwise(Pointwise, const Tensor<double>&);

}  // namespace mumoe
