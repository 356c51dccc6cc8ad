#include "mumoe/init.hpp"

#include <cmath>
#include <random>

namespace mumoe {

double InitConfig::sigma_for(std::size_t level) const {
  double s = level < sigma.size() ? sigma[level] : (level == 0 ? 1.0 : 0.0);
  if (!(s >= 0.0)) throw ConfigError("init sigma must be non-negative");
  return s;
}

namespace {

template <typename T>
void fill_uniform(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

// sigma == 0 gives exactly 1 without consuming randomness.
double draw_around_one(double sigma, std::mt19937_64& rng) {
  if (sigma == 0.0) return 1.0;
  return std::normal_distribution<double>(1.0, sigma)(rng);
}

}  // namespace

template <typename T>
MoeLayer<T> init_layer(const LayerConfig& config, const InitConfig& init) {
  config.validate();
  std::mt19937_64 rng(init.seed);
  MoeLayer<T> layer;
  layer.config = config;
  const std::size_t levels = config.levels();
  const double in_bound = std::sqrt(1.0 / double(config.folded_input_dim()));

  if (config.gated) {
    const double gate_bound = std::sqrt(1.0 / double(config.input_dim));
    for (std::size_t e = 0; e < levels; ++e) {
      GateLevel<T> g;
      g.weight = Tensor<T>({config.input_dim, config.experts[e]});
      fill_uniform(g.weight, gate_bound, rng);
      g.norm = NormState<T>::make(config.gate_norm, config.experts[e], config.norm_momentum, config.norm_eps);
      layer.gates.push_back(std::move(g));
    }
  }

  const Shape shape = config.weight_shape();
  switch (config.kind) {
    case LayerKind::dense: {
      const std::size_t in = config.folded_input_dim(), out = config.output_dim;
      Tensor<T> base({in, out});
      fill_uniform(base, in_bound, rng);
      std::vector<std::vector<double>> scale(levels);
      for (std::size_t e = 0; e < levels; ++e) {
        const double s = init.sigma_for(e);
        for (std::size_t n = 0; n < config.experts[e]; ++n) scale[e].push_back(draw_around_one(s, rng));
      }
      Tensor<T> w(shape);
      const std::size_t cells = config.total_experts();
      std::vector<std::size_t> idx(levels, 0);
      for (std::size_t cell = 0; cell < cells; ++cell) {
        double c = 1.0;
        for (std::size_t e = 0; e < levels; ++e) c *= scale[e][idx[e]];
        for (std::size_t k = 0; k < in * out; ++k) w[cell * in * out + k] = static_cast<T>(c * double(base[k]));
        for (std::size_t e = levels; e-- > 0;) {
          if (++idx[e] < config.experts[e]) break;
          idx[e] = 0;
        }
      }
      layer.weights = DenseWeights<T>{std::move(w)};
      break;
    }
    case LayerKind::cp: {
      const std::size_t rank = config.cp_rank;
      CpWeights<T> cp;
      for (std::size_t e = 0; e < levels; ++e) {
        Tensor<T> f({rank, config.experts[e]});
        const double s = init.sigma_for(e);
        for (auto& v : f.data()) v = static_cast<T>(draw_around_one(s, rng));
        cp.factors.push_back(std::move(f));
      }
      Tensor<T> u_in({rank, config.folded_input_dim()});
      fill_uniform(u_in, in_bound, rng);
      Tensor<T> u_out({rank, config.output_dim});
      fill_uniform(u_out, std::sqrt(1.0 / double(rank)), rng);
      cp.factors.push_back(std::move(u_in));
      cp.factors.push_back(std::move(u_out));
      layer.weights = std::move(cp);
      break;
    }
    case LayerKind::tr: {
      const auto& r = config.tr_ranks;
      TrWeights<T> tr;
      for (std::size_t e = 0; e < levels; ++e) {
        Tensor<T> core({r[e], config.experts[e], r[e + 1]});
        const double s = init.sigma_for(e);
        const std::size_t diag = std::min(r[e], r[e + 1]);
        for (std::size_t n = 0; n < config.experts[e]; ++n)
          for (std::size_t p = 0; p < diag; ++p) core(p, n, p) = static_cast<T>(draw_around_one(s, rng));
        tr.cores.push_back(std::move(core));
      }
      Tensor<T> u_in({r[levels], config.folded_input_dim(), r[levels + 1]});
      fill_uniform(u_in, in_bound, rng);
      Tensor<T> u_out({r[levels + 1], config.output_dim, r[0]});
      fill_uniform(u_out, std::sqrt(1.0 / double(r[0] * r[levels + 1])), rng);
      tr.cores.push_back(std::move(u_in));
      tr.cores.push_back(std::move(u_out));
      layer.weights = std::move(tr);
      break;
    }
  }
  return layer;
}

template MoeLayer<float> init_layer(const LayerConfig&, const InitConfig&);
template MoeLayer<double> init_layer(const LayerConfig&, const InitConfig&);

}  // namespace mumoe
