#include "mumoe/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mumoe/cost_model.hpp"
#include "mumoe/init.hpp"
#include "mumoe/moe_layer.hpp"
#include "mumoe/svd.hpp"

namespace mumoe {

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

LayerConfig random_config(Rng& rng, LayerKind kind, std::size_t max_dim) {
  LayerConfig c;
  c.kind = kind;
  const std::size_t levels = pick(rng, 1, 3);
  c.experts.clear();
  for (std::size_t e = 0; e < levels; ++e) c.experts.push_back(pick(rng, 1, levels == 1 ? max_dim : 4));
  c.input_dim = pick(rng, 1, max_dim);
  c.output_dim = pick(rng, 1, max_dim);
  c.bias = pick(rng, 0, 1) == 1;
  c.cp_rank = pick(rng, 1, 4);
  if (kind == LayerKind::tr)
    for (std::size_t k = 0; k < levels + 2; ++k) c.tr_ranks.push_back(pick(rng, 1, 3));
  c.gate_activation = pick(rng, 0, 1) ? GateActivation::entmax15 : GateActivation::softmax;
  const std::size_t norm = pick(rng, 0, 2);
  c.gate_norm = norm == 0 ? NormKind::none : norm == 1 ? NormKind::batch : NormKind::layer;
  return c;
}

MoeLayer<double> random_layer(Rng& rng, const LayerConfig& c) {
  InitConfig init;
  init.seed = rng();
  for (std::size_t e = 0; e < c.levels(); ++e) init.sigma.push_back(1.0);
  MoeLayer<double> layer = init_layer<double>(c, init);
  // Non-trivial norm affine parameters.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& g : layer.gates)
    if (g.norm.kind != NormKind::none) {
      for (auto& v : g.norm.gamma.data()) v = 1.0 + 0.3 * normal(rng);
      for (auto& v : g.norm.beta.data()) v = 0.3 * normal(rng);
    }
  return layer;
}

Tensor<double> random_matrix(Rng& rng, std::size_t r, std::size_t c) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<double> t({r, c});
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

ExpertCoefficients<double> random_coefficients(Rng& rng, const LayerConfig& c, std::size_t batch) {
  ExpertCoefficients<double> out;
  for (auto n : c.experts) out.levels.push_back(simplex_rows(GateActivation::softmax, random_matrix(rng, batch, n)));
  return out;
}

SuiteResult oracle_suite(Rng& rng, LayerKind kind, std::size_t instances) {
  SuiteResult r;
  r.name = "forward_" + to_string(kind) + "_vs_materialized";
  for (std::size_t k = 0; k < instances; ++k) {
    const LayerConfig c = random_config(rng, kind, 8);
    const MoeLayer<double> layer = random_layer(rng, c);
    const std::size_t batch = pick(rng, 1, 4);
    const auto coeffs = random_coefficients(rng, c, batch);
    const Tensor<double> z = random_matrix(rng, batch, c.input_dim);
    const Tensor<double> fast = forward_with_coefficients(layer, coeffs, z);
    const Tensor<double> zf = c.bias ? fold_bias(z) : z;
    const Tensor<double> slow = dense_forward(DenseWeights<double>{materialize_weights(layer)}, coeffs, zf);
    r.worst = std::max(r.worst, relative_error(fast, slow));
    ++r.cases;
  }
  r.passed = r.worst <= 1e-10;
  return r;
}

SuiteResult gradient_suite(Rng& rng, std::size_t instances) {
  SuiteResult r;
  r.name = "gradients_vs_finite_differences";
  const LayerKind kinds[] = {LayerKind::dense, LayerKind::cp, LayerKind::tr};
  for (std::size_t k = 0; k < instances; ++k) {
    const LayerConfig c = random_config(rng, kinds[k % 3], 5);
    MoeLayer<double> layer = random_layer(rng, c);
    const std::size_t batch = pick(rng, 2, 4);
    const Tensor<double> z = random_matrix(rng, batch, c.input_dim);
    const Tensor<double> probe = random_matrix(rng, batch, c.output_dim);
    auto loss = [&](const MoeLayer<double>& l, const Tensor<double>& x) {
      const Tensor<double> y = forward(l, x, Mode::training);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
      return s;
    };
    ForwardCache<double> cache;
    forward(layer, z, Mode::training, &cache);
    const LayerGrads<double> g = backward(layer, cache, probe);
    const double h = 1e-5;
    auto params = layer.parameters();
    auto check = [&](Tensor<double>& t, const Tensor<double>& analytic, const MoeLayer<double>& l,
                     Tensor<double>& x) {
      double num = 0.0, den = 0.0;
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double keep = t[i];
        t[i] = keep + h;
        const double up = loss(l, x);
        t[i] = keep - h;
        const double down = loss(l, x);
        t[i] = keep;
        const double fd = (up - down) / (2 * h);
        num += (fd - analytic[i]) * (fd - analytic[i]);
        den += fd * fd;
      }
      r.worst = std::max(r.worst, std::sqrt(num) / std::max(std::sqrt(den), 1e-6));
    };
    Tensor<double> zin = z;
    for (std::size_t p = 0; p < params.size(); ++p) check(*params[p].tensor, g.params[p], layer, zin);
    check(zin, g.input, layer, zin);
    ++r.cases;
  }
  r.passed = r.worst <= 1e-5;
  return r;
}

SuiteResult rank_suite(Rng& rng, std::size_t instances) {
  SuiteResult r;
  r.name = "expert_rank_bounds";
  bool ok = true;
  const LayerKind kinds[] = {LayerKind::dense, LayerKind::cp, LayerKind::tr};
  for (std::size_t k = 0; k < instances; ++k) {
    LayerConfig c = random_config(rng, kinds[k % 3], 8);
    const MoeLayer<double> layer = random_layer(rng, c);
    std::vector<std::size_t> idx;
    for (auto n : c.experts) idx.push_back(pick(rng, 0, n - 1));
    const auto rank = numerical_rank(materialize_expert<double>(layer, idx));
    const auto bound = rank_bound(c);
    if (rank > bound) ok = false;
    r.worst = std::max(r.worst, double(rank) - double(bound));
    ++r.cases;
  }
  r.passed = ok;
  return r;
}

SuiteResult ablation_suite(Rng& rng, std::size_t instances) {
  SuiteResult r;
  r.name = "ablation_mask_vs_zeroed_slice";
  const LayerKind kinds[] = {LayerKind::dense, LayerKind::cp, LayerKind::tr};
  for (std::size_t k = 0; k < instances; ++k) {
    LayerConfig c = random_config(rng, kinds[k % 3], 8);
    MoeLayer<double> layer = random_layer(rng, c);
    const std::size_t level = pick(rng, 0, c.levels() - 1);
    const std::size_t n = pick(rng, 0, c.experts[level] - 1);
    const std::size_t batch = pick(rng, 1, 4);
    const auto coeffs = random_coefficients(rng, c, batch);
    const Tensor<double> z = random_matrix(rng, batch, c.input_dim);

    MoeLayer<double> masked = layer;
    masked.expert_masks.assign(c.levels(), {});
    masked.expert_masks[level].assign(c.experts[level], 1);
    masked.expert_masks[level][n] = 0;
    const Tensor<double> got = forward_with_coefficients(masked, coeffs, z);

    Tensor<double> w = materialize_weights(layer);
    const Shape shape = c.weight_shape();
    std::vector<std::size_t> idx(shape.size(), 0);
    for (std::size_t flat = 0; flat < w.size(); ++flat) {
      if (idx[level] == n) w[flat] = 0.0;
      for (std::size_t a = shape.size(); a-- > 0;) {
        if (++idx[a] < shape[a]) break;
        idx[a] = 0;
      }
    }
    const Tensor<double> want = dense_forward(DenseWeights<double>{w}, coeffs, c.bias ? fold_bias(z) : z);
    double err = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) err = std::max(err, std::abs(got[i] - want[i]));
    r.worst = std::max(r.worst, err / std::max(1.0, frobenius_norm(want)));
    ++r.cases;
  }
  r.passed = r.worst <= 1e-10;
  return r;
}

SuiteResult simplex_suite(Rng& rng, std::size_t instances) {
  SuiteResult r;
  r.name = "simplex_activation_properties";
  std::size_t violations = 0;
  std::normal_distribution<double> normal(0.0, 2.0);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = pick(rng, 2, 64);
    std::vector<double> z(n);
    for (auto& v : z) v = normal(rng);
    for (bool sparse : {true, false}) {
      auto act = [&](const std::vector<double>& x) { return sparse ? entmax15<double>(x) : softmax<double>(x); };
      const auto p = act(z);
      double sum = 0.0;
      for (double v : p) {
        if (v < 0.0) ++violations;
        sum += v;
      }
      if (std::abs(sum - 1.0) > 1e-10) ++violations;
      std::vector<double> shifted = z;
      const double c = normal(rng);
      for (auto& v : shifted) v += c;
      const auto ps = act(shifted);
      for (std::size_t i = 0; i < n; ++i)
        if (std::abs(ps[i] - p[i]) > 1e-10) ++violations;
      std::vector<std::size_t> perm(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      std::vector<double> zp(n);
      for (std::size_t i = 0; i < n; ++i) zp[i] = z[perm[i]];
      const auto pp = act(zp);
      for (std::size_t i = 0; i < n; ++i)
        if (std::abs(pp[i] - p[perm[i]]) > 1e-12) ++violations;
      if (sparse)
        for (double t : {2.0, 4.0, 8.0}) {
          std::vector<double> zt = z;
          for (auto& v : zt) v *= t;
          const auto pt = act(zt);
          for (std::size_t i = 0; i < n; ++i)
            if (pt[i] > 0.0 && p[i] == 0.0) ++violations;
        }
    }
    ++r.cases;
  }
  r.worst = double(violations);
  r.passed = violations == 0;
  return r;
}

}  // namespace

std::vector<SuiteResult> run_verification(std::uint64_t seed, std::size_t scale) {
  Rng rng(seed);
  scale = std::max<std::size_t>(scale, 1);
  std::vector<SuiteResult> out;
  out.push_back(oracle_suite(rng, LayerKind::cp, 200 * scale));
  out.push_back(oracle_suite(rng, LayerKind::tr, 200 * scale));
  out.push_back(oracle_suite(rng, LayerKind::dense, 50 * scale));
  out.push_back(gradient_suite(rng, 30 * scale));
  out.push_back(rank_suite(rng, 100 * scale));
  out.push_back(ablation_suite(rng, 100 * scale));
  out.push_back(simplex_suite(rng, 1000 * scale));
  return out;
}

}  // namespace mumoe
