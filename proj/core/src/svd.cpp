#include "mumoe/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mumoe {

namespace {

template <typename T>
constexpr double jacobi_tolerance() {
  return std::is_same_v<T, float> ? 1e-6 : 1e-12;
}

// Works on a tall (rows >= cols) column-major copy; returns singular
// values in column order together with the rotated columns.
struct JacobiResult {
  std::size_t rows = 0, cols = 0;
  std::vector<double> a;  // column j at a[j * rows]
  std::vector<double> v;  // column j at v[j * cols]
};

JacobiResult one_sided_jacobi(std::vector<double> a, std::size_t rows, std::size_t cols, double tol) {
  std::vector<double> v(cols * cols, 0.0);
  for (std::size_t j = 0; j < cols; ++j) v[j * cols + j] = 1.0;

  constexpr int kMaxSweeps = 100;
  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < cols; ++p)
      for (std::size_t q = p + 1; q < cols; ++q) {
        double* cp = &a[p * rows];
        double* cq = &a[q * rows];
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
          alpha += cp[i] * cp[i];
          beta += cq[i] * cq[i];
          gamma += cp[i] * cq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < rows; ++i) {
          const double x = cp[i], y = cq[i];
          cp[i] = c * x - s * y;
          cq[i] = s * x + c * y;
        }
        double* vp = &v[p * cols];
        double* vq = &v[q * cols];
        for (std::size_t i = 0; i < cols; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    if (!rotated) break;
  }
  return {rows, cols, std::move(a), std::move(v)};
}

}  // namespace

template <typename T>
Svd<T> svd(const Tensor<T>& m) {
  if (m.order() != 2) throw ShapeError("svd needs a matrix");
  for (auto x : m.data())
    if (!std::isfinite(double(x))) throw DomainError("svd: non-finite matrix entry");

  const bool wide = m.cols() > m.rows();
  const std::size_t rows = wide ? m.cols() : m.rows();
  const std::size_t cols = wide ? m.rows() : m.cols();
  std::vector<double> a(rows * cols);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) {
      // column-major tall layout: element (r, c) at a[c * rows + r]
      const std::size_t r = wide ? j : i;
      const std::size_t c = wide ? i : j;
      a[c * rows + r] = double(m(i, j));
    }

  JacobiResult jr = one_sided_jacobi(std::move(a), rows, cols, jacobi_tolerance<T>());

  std::vector<double> sigma(cols);
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += jr.a[j * rows + i] * jr.a[j * rows + i];
    sigma[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(cols);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  // Tall factorization: A_tall = L diag(s) R^T with L rows x k, R cols x k.
  Tensor<T> left({rows, cols});
  Tensor<T> right({cols, cols});
  std::vector<T> s(cols);
  for (std::size_t k = 0; k < cols; ++k) {
    const std::size_t j = order[k];
    s[k] = static_cast<T>(sigma[j]);
    for (std::size_t i = 0; i < rows; ++i)
      left(i, k) = static_cast<T>(sigma[j] > 0.0 ? jr.a[j * rows + i] / sigma[j] : 0.0);
    for (std::size_t i = 0; i < cols; ++i) right(i, k) = static_cast<T>(jr.v[j * cols + i]);
  }
  if (wide) return {std::move(right), std::move(s), std::move(left)};
  return {std::move(left), std::move(s), std::move(right)};
}

template <typename T>
std::vector<T> singular_values(const Tensor<T>& m) {
  return svd(m).s;
}

template <typename T>
Tensor<T> truncate(const Tensor<T>& m, std::size_t k) {
  const Svd<T> d = svd(m);
  k = std::min(k, d.s.size());
  Tensor<T> out({m.rows(), m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t r = 0; r < k; ++r) acc += double(d.u(i, r)) * double(d.s[r]) * double(d.v(j, r));
      out(i, j) = static_cast<T>(acc);
    }
  return out;
}

template <typename T>
std::size_t numerical_rank(const Tensor<T>& m, double tol) {
  const auto s = singular_values(m);
  if (s.empty() || s[0] <= T{0}) return 0;
  const double cutoff = tol * double(s[0]);
  return static_cast<std::size_t>(
      std::count_if(s.begin(), s.end(), [&](T x) { return double(x) > cutoff; }));
}

template struct Svd<float>;
template struct Svd<double>;
template Svd<float> svd(const Tensor<float>&);
template Svd<double> svd(const Tensor<double>&);
template std::vector<float> singular_values(const Tensor<float>&);
template std::vector<double> singular_values(const Tensor<double>&);
template Tensor<float> truncate(const Tensor<float>&, std::size_t);
template Tensor<double> truncate(const Tensor<double>&, std::size_t);
template std::size_t numerical_rank(const Tensor<float>&, double);
template std::size_t numerical_rank(const Tensor<double>&, double);

}  // namespace mumoe
