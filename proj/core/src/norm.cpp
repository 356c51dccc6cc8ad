#include "mumoe/norm.hpp"

#include <cmath>
#include <string>

namespace mumoe {

template <typename T>
NormState<T> NormState<T>::make(NormKind kind, std::size_t features, double momentum, double eps) {
  if (!(eps > 0.0)) throw UsageError("norm eps must be positive");
  if (!(momentum > 0.0 && momentum < 1.0)) throw UsageError("norm momentum must lie in (0, 1)");
  NormState s;
  s.kind = kind;
  s.momentum = momentum;
  s.eps = eps;
  if (kind != NormKind::none) {
    s.gamma = Tensor<T>({features}, T{1});
    s.beta = Tensor<T>({features}, T{0});
  }
  if (kind == NormKind::batch) {
    s.running_mean = Tensor<T>({features}, T{0});
    s.running_var = Tensor<T>({features}, T{1});
  }
  return s;
}

template <typename T>
Tensor<T> normalize_forward(const NormState<T>& state, const Tensor<T>& x, Mode mode, NormCache<T>* cache) {
  if (x.order() != 2) throw ShapeError("normalize expects a batch matrix");
  if (state.kind == NormKind::none) {
    if (cache) {
      cache->mode = mode;
      cache->normalized = x;
    }
    return x;
  }
  const std::size_t rows = x.rows(), feats = x.cols();
  if (feats != state.features())
    throw ShapeError("normalize: " + std::to_string(feats) + " features, state has " +
                     std::to_string(state.features()));

  Tensor<T> xhat(x.shape());
  std::vector<double> inv_std, mean_out, var_out;

  if (state.kind == NormKind::batch) {
    std::vector<double> mean(feats, 0.0), var(feats, 0.0);
    if (mode == Mode::training) {
      if (rows < 2) throw UsageError("batch norm in training mode needs at least 2 rows");
      for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t j = 0; j < feats; ++j) mean[j] += double(x(b, j));
      for (auto& m : mean) m /= double(rows);
      for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t j = 0; j < feats; ++j) {
          const double d = double(x(b, j)) - mean[j];
          var[j] += d * d;
        }
      for (auto& v : var) v /= double(rows);
    } else {
      for (std::size_t j = 0; j < feats; ++j) {
        mean[j] = double(state.running_mean[j]);
        var[j] = double(state.running_var[j]);
      }
    }
    inv_std.resize(feats);
    for (std::size_t j = 0; j < feats; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
    for (std::size_t b = 0; b < rows; ++b)
      for (std::size_t j = 0; j < feats; ++j)
        xhat(b, j) = static_cast<T>((double(x(b, j)) - mean[j]) * inv_std[j]);
    mean_out = std::move(mean);
    var_out = std::move(var);
  } else {
    inv_std.resize(rows);
    for (std::size_t b = 0; b < rows; ++b) {
      double mean = 0.0, var = 0.0;
      for (std::size_t j = 0; j < feats; ++j) mean += double(x(b, j));
      mean /= double(feats);
      for (std::size_t j = 0; j < feats; ++j) {
        const double d = double(x(b, j)) - mean;
        var += d * d;
      }
      var /= double(feats);
      inv_std[b] = 1.0 / std::sqrt(var + state.eps);
      for (std::size_t j = 0; j < feats; ++j) xhat(b, j) = static_cast<T>((double(x(b, j)) - mean) * inv_std[b]);
    }
  }

  Tensor<T> y(x.shape());
  for (std::size_t b = 0; b < rows; ++b)
    for (std::size_t j = 0; j < feats; ++j)
      y(b, j) = static_cast<T>(double(state.gamma[j]) * double(xhat(b, j)) + double(state.beta[j]));

  if (cache) {
    cache->mode = mode;
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
    cache->batch_mean = std::move(mean_out);
    cache->batch_var = std::move(var_out);
  }
  return y;
}

template <typename T>
void update_running_stats(NormState<T>& state, const NormCache<T>& cache, std::size_t batch_rows) {
  if (state.kind != NormKind::batch || cache.mode != Mode::training) return;
  if (cache.batch_mean.size() != state.features()) throw UsageError("stale norm cache");
  const double m = state.momentum;
  const double unbias = double(batch_rows) / double(batch_rows - 1);
  for (std::size_t j = 0; j < state.features(); ++j) {
    state.running_mean[j] = static_cast<T>((1.0 - m) * double(state.running_mean[j]) + m * cache.batch_mean[j]);
    state.running_var[j] =
        static_cast<T>((1.0 - m) * double(state.running_var[j]) + m * cache.batch_var[j] * unbias);
  }
}

template <typename T>
Tensor<T> normalize(NormState<T>& state, const Tensor<T>& x, Mode mode) {
  NormCache<T> cache;
  Tensor<T> y = normalize_forward(state, x, mode, &cache);
  if (mode == Mode::training) update_running_stats(state, cache, x.rows());
  return y;
}

template <typename T>
NormGrads<T> normalize_backward(const NormState<T>& state, const NormCache<T>& cache, const Tensor<T>& upstream) {
  NormGrads<T> g;
  if (state.kind == NormKind::none) {
    g.input = upstream;
    return g;
  }
  const Tensor<T>& xhat = cache.normalized;
  if (xhat.shape() != upstream.shape()) throw UsageError("stale norm cache: shape mismatch");
  const std::size_t rows = upstream.rows(), feats = upstream.cols();

  g.gamma = Tensor<T>({feats});
  g.beta = Tensor<T>({feats});
  for (std::size_t j = 0; j < feats; ++j) {
    double dg = 0.0, db = 0.0;
    for (std::size_t b = 0; b < rows; ++b) {
      dg += double(upstream(b, j)) * double(xhat(b, j));
      db += double(upstream(b, j));
    }
    g.gamma[j] = static_cast<T>(dg);
    g.beta[j] = static_cast<T>(db);
  }

  g.input = Tensor<T>(upstream.shape());
  auto dxhat = [&](std::size_t b, std::size_t j) { return double(upstream(b, j)) * double(state.gamma[j]); };

  if (state.kind == NormKind::batch) {
    if (cache.mode == Mode::eval) {
      for (std::size_t b = 0; b < rows; ++b)
        for (std::size_t j = 0; j < feats; ++j) g.input(b, j) = static_cast<T>(dxhat(b, j) * cache.inv_std[j]);
      return g;
    }
    const double n = double(rows);
    for (std::size_t j = 0; j < feats; ++j) {
      double sum = 0.0, sum_x = 0.0;
      for (std::size_t b = 0; b < rows; ++b) {
        sum += dxhat(b, j);
        sum_x += dxhat(b, j) * double(xhat(b, j));
      }
      for (std::size_t b = 0; b < rows; ++b)
        g.input(b, j) = static_cast<T>(cache.inv_std[j] / n * (n * dxhat(b, j) - sum - double(xhat(b, j)) * sum_x));
    }
  } else {
    const double n = double(feats);
    for (std::size_t b = 0; b < rows; ++b) {
      double sum = 0.0, sum_x = 0.0;
      for (std::size_t j = 0; j < feats; ++j) {
        sum += dxhat(b, j);
        sum_x += dxhat(b, j) * double(xhat(b, j));
      }
      for (std::size_t j = 0; j < feats; ++j)
        g.input(b, j) = static_cast<T>(cache.inv_std[b] / n * (n * dxhat(b, j) - sum - double(xhat(b, j)) * sum_x));
    }
  }
  return g;
}

template struct NormState<float>;
template struct NormState<double>;
template Tensor<float> normalize_forward(const NormState<float>&, const Tensor<float>&, Mode, NormCache<float>*);
template Tensor<double> normalize_forward(const NormState<double>&, const Tensor<double>&, Mode, NormCache<double>*);
template void update_running_stats(NormState<float>&, const NormCache<float>&, std::size_t);
template void update_running_stats(NormState<double>&, const NormCache<double>&, std::size_t);
template Tensor<float> normalize(NormState<float>&, const Tensor<float>&, Mode);
template Tensor<double> normalize(NormState<double>&, const Tensor<double>&, Mode);
template NormGrads<float> normalize_backward(const NormState<float>&, const NormCache<float>&, const Tensor<float>&);
template NormGrads<double> normalize_backward(const NormState<double>&, const NormCache<double>&, const Tensor<double>&);

}  // namespace mumoe
