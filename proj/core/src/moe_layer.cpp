#include "mumoe/moe_layer.hpp"

#include <string>

#include "mumoe/decomposition.hpp"
#include "mumoe/parallel.hpp"

namespace mumoe {

namespace {

template <class... Fs>
struct overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
overloaded(Fs...) -> overloaded<Fs...>;

// Small row-major double matrix used for the per-row TR chain algebra.
struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

// a^T * b
Mat mul_tn(const Mat& a, const Mat& b) {
  Mat c(a.cols, b.cols);
  for (std::size_t i = 0; i < a.cols; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.rows; ++k) acc += a(k, i) * b(k, j);
      c(i, j) = acc;
    }
  return c;
}

// a * b^T
Mat mul_nt(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += a(i, k) * b(j, k);
      c(i, j) = acc;
    }
  return c;
}

template <typename T>
Mat slice_of(const Tensor<T>& t, std::size_t b) {
  // t has shape (B, r, c)
  Mat m(t.extent(1), t.extent(2));
  const std::size_t off = b * m.rows * m.cols;
  for (std::size_t k = 0; k < m.v.size(); ++k) m.v[k] = double(t[off + k]);
  return m;
}

void check_coefficients(const std::vector<std::size_t>& experts, std::size_t batch,
                        const std::vector<std::size_t>& got_levels_cols,
                        const std::vector<std::size_t>& got_levels_rows) {
  if (got_levels_cols.size() != experts.size())
    throw ShapeError("expected coefficients for " + std::to_string(experts.size()) + " levels, got " +
                     std::to_string(got_levels_cols.size()));
  for (std::size_t e = 0; e < experts.size(); ++e) {
    if (got_levels_cols[e] != experts[e])
      throw ShapeError("level " + std::to_string(e + 1) + " coefficients have " +
                       std::to_string(got_levels_cols[e]) + " columns, expected " + std::to_string(experts[e]));
    if (got_levels_rows[e] != batch) throw ShapeError("coefficient batch size mismatch");
  }
}

template <typename T>
void check_coefficients(const ExpertCoefficients<T>& coeffs, const std::vector<std::size_t>& experts,
                        std::size_t batch) {
  std::vector<std::size_t> cols, rows;
  for (const auto& l : coeffs.levels) {
    if (l.order() != 2) throw ShapeError("coefficients must be B x N_e matrices");
    cols.push_back(l.cols());
    rows.push_back(l.rows());
  }
  check_coefficients(experts, batch, cols, rows);
}

template <typename T>
std::vector<std::size_t> expert_counts(const Weights<T>& w) {
  return std::visit(overloaded{
                        [](const DenseWeights<T>& d) {
                          const auto& s = d.w.shape();
                          return std::vector<std::size_t>(s.begin(), s.end() - 2);
                        },
                        [](const CpWeights<T>& c) {
                          std::vector<std::size_t> n;
                          for (std::size_t k = 0; k + 2 < c.factors.size(); ++k) n.push_back(c.factors[k].cols());
                          return n;
                        },
                        [](const TrWeights<T>& t) {
                          std::vector<std::size_t> n;
                          for (std::size_t k = 0; k + 2 < t.cores.size(); ++k) n.push_back(t.cores[k].extent(1));
                          return n;
                        },
                    },
                    w);
}

template <typename T>
std::pair<std::size_t, std::size_t> io_dims(const Weights<T>& w) {
  return std::visit(overloaded{
                        [](const DenseWeights<T>& d) {
                          const auto& s = d.w.shape();
                          return std::pair{s[s.size() - 2], s.back()};
                        },
                        [](const CpWeights<T>& c) {
                          const auto n = c.factors.size();
                          return std::pair{c.factors[n - 2].cols(), c.factors[n - 1].cols()};
                        },
                        [](const TrWeights<T>& t) {
                          const auto n = t.cores.size();
                          return std::pair{t.cores[n - 2].extent(1), t.cores[n - 1].extent(1)};
                        },
                    },
                    w);
}

template <typename T>
void check_input(const Weights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf) {
  if (zf.order() != 2) throw ShapeError("layer input must be a B x I matrix");
  const auto [in, out] = io_dims(w);
  (void)out;
  if (zf.cols() != in)
    throw ShapeError("layer input has " + std::to_string(zf.cols()) + " columns, weights expect " +
                     std::to_string(in));
  check_coefficients(coeffs, expert_counts(w), zf.rows());
}

// Odometer over the expert grid; coefficient product for the current cell.
struct GridWalker {
  const std::vector<std::size_t>& dims;
  std::vector<std::size_t> idx;
  explicit GridWalker(const std::vector<std::size_t>& d) : dims(d), idx(d.size(), 0) {}
  void advance() {
    for (std::size_t k = idx.size(); k-- > 0;) {
      if (++idx[k] < dims[k]) return;
      idx[k] = 0;
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// MoeLayer bookkeeping

template <typename T>
void MoeLayer<T>::validate() const {
  config.validate();
  const std::size_t levels = config.levels();
  if (config.gated) {
    if (gates.size() != levels) throw ShapeError("layer needs one gate per hierarchy level");
    for (std::size_t e = 0; e < levels; ++e) {
      const auto& g = gates[e];
      if (g.weight.shape() != Shape{config.input_dim, config.experts[e]})
        throw ShapeError("gate " + std::to_string(e + 1) + " has shape " + shape_string(g.weight.shape()));
      if (g.norm.kind != config.gate_norm) throw ShapeError("gate norm kind differs from config");
      if (g.norm.kind != NormKind::none && g.norm.features() != config.experts[e])
        throw ShapeError("gate norm feature count mismatch");
    }
  } else if (!gates.empty()) {
    throw ShapeError("ungated layer must not carry gates");
  }

  const Shape ws = config.weight_shape();
  const std::size_t in = config.folded_input_dim(), out = config.output_dim;
  std::visit(overloaded{
                 [&](const DenseWeights<T>& d) {
                   if (config.kind != LayerKind::dense || d.w.shape() != ws)
                     throw ShapeError("dense weights " + shape_string(d.w.shape()) + " do not match config " +
                                      shape_string(ws));
                 },
                 [&](const CpWeights<T>& c) {
                   if (config.kind != LayerKind::cp || c.factors.size() != levels + 2)
                     throw ShapeError("cp weights need " + std::to_string(levels + 2) + " factors");
                   for (std::size_t k = 0; k < c.factors.size(); ++k)
                     if (c.factors[k].shape() != Shape{config.cp_rank, ws[k]})
                       throw ShapeError("cp factor " + std::to_string(k + 1) + " has shape " +
                                        shape_string(c.factors[k].shape()));
                 },
                 [&](const TrWeights<T>& t) {
                   if (config.kind != LayerKind::tr || t.cores.size() != levels + 2)
                     throw ShapeError("tr weights need " + std::to_string(levels + 2) + " cores");
                   check_ring<T>(t.cores);
                   for (std::size_t k = 0; k < t.cores.size(); ++k) {
                     const Shape want{config.tr_ranks[k], ws[k], config.tr_ranks[(k + 1) % t.cores.size()]};
                     if (t.cores[k].shape() != want)
                       throw ShapeError("tr core " + std::to_string(k + 1) + " has shape " +
                                        shape_string(t.cores[k].shape()) + ", expected " + shape_string(want));
                   }
                 },
             },
             weights);
  (void)in;
  (void)out;

  if (!expert_masks.empty()) {
    if (expert_masks.size() != levels) throw ShapeError("expert masks need one entry per level");
    for (std::size_t e = 0; e < levels; ++e)
      if (!expert_masks[e].empty() && expert_masks[e].size() != config.experts[e])
        throw ShapeError("expert mask length mismatch at level " + std::to_string(e + 1));
  }
}

template <typename T>
std::vector<ParamRef<T>> MoeLayer<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t e = 0; e < gates.size(); ++e) {
    const std::string p = "gate" + std::to_string(e + 1) + ".";
    out.push_back({p + "weight", &gates[e].weight});
    if (gates[e].norm.kind != NormKind::none) {
      out.push_back({p + "gamma", &gates[e].norm.gamma});
      out.push_back({p + "beta", &gates[e].norm.beta});
    }
  }
  std::visit(overloaded{
                 [&](DenseWeights<T>& d) { out.push_back({"dense.W", &d.w}); },
                 [&](CpWeights<T>& c) {
                   for (std::size_t k = 0; k < c.factors.size(); ++k)
                     out.push_back({"cp.U" + std::to_string(k + 1), &c.factors[k]});
                 },
                 [&](TrWeights<T>& t) {
                   for (std::size_t k = 0; k < t.cores.size(); ++k)
                     out.push_back({"tr.core" + std::to_string(k + 1), &t.cores[k]});
                 },
             },
             weights);
  return out;
}

template <typename T>
std::vector<ConstParamRef<T>> MoeLayer<T>::parameters() const {
  std::vector<ConstParamRef<T>> out;
  for (auto& p : const_cast<MoeLayer<T>*>(this)->parameters()) out.push_back({std::move(p.name), p.tensor});
  return out;
}

template <typename T>
std::size_t MoeLayer<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& p : const_cast<MoeLayer<T>*>(this)->parameters()) n += p.tensor->size();
  return n;
}

// ---------------------------------------------------------------------------
// Gating

template <typename T>
Tensor<T> fold_bias(const Tensor<T>& z) {
  if (z.order() != 2) throw ShapeError("fold_bias expects a batch matrix");
  Tensor<T> out({z.rows(), z.cols() + 1});
  for (std::size_t b = 0; b < z.rows(); ++b) {
    for (std::size_t i = 0; i < z.cols(); ++i) out(b, i) = z(b, i);
    out(b, z.cols()) = T{1};
  }
  return out;
}

template <typename T>
ExpertCoefficients<T> gate_coefficients(const MoeLayer<T>& layer, const Tensor<T>& z, Mode mode,
                                        GateCache<T>* cache) {
  if (!layer.config.gated) throw UsageError("layer has no gating parameters; supply coefficients");
  if (z.order() != 2 || z.cols() != layer.config.input_dim)
    throw ShapeError("gating input must be B x " + std::to_string(layer.config.input_dim) + ", got " +
                     shape_string(z.shape()));
  const std::size_t levels = layer.config.levels();
  ExpertCoefficients<T> coeffs;
  if (cache) {
    cache->mode = mode;
    cache->input = z;
    cache->norm.assign(levels, {});
    cache->probs.assign(levels, {});
  }
  for (std::size_t e = 0; e < levels; ++e) {
    const auto& gate = layer.gates[e];
    const Tensor<T> logits = matmul(z, gate.weight);
    const Tensor<T> normed = normalize_forward(gate.norm, logits, mode, cache ? &cache->norm[e] : nullptr);
    Tensor<T> probs = simplex_rows(layer.config.gate_activation, normed);
    Tensor<T> effective = probs;
    if (!layer.expert_masks.empty() && !layer.expert_masks[e].empty())
      for (std::size_t b = 0; b < effective.rows(); ++b)
        for (std::size_t n = 0; n < effective.cols(); ++n)
          if (!layer.expert_masks[e][n]) effective(b, n) = T{0};
    if (cache) cache->probs[e] = std::move(probs);
    coeffs.levels.push_back(std::move(effective));
  }
  return coeffs;
}

template <typename T>
GateGrads<T> gate_backward(const MoeLayer<T>& layer, const GateCache<T>& cache,
                           const std::vector<Tensor<T>>& coeff_grads) {
  const std::size_t levels = layer.config.levels();
  if (cache.probs.size() != levels || coeff_grads.size() != levels)
    throw UsageError("stale gate cache: level count mismatch");
  const Tensor<T>& z = cache.input;
  GateGrads<T> g;
  g.input = Tensor<T>(z.shape());
  for (std::size_t e = 0; e < levels; ++e) {
    const auto& gate = layer.gates[e];
    if (cache.probs[e].shape() != coeff_grads[e].shape()) throw UsageError("stale gate cache: shape mismatch");
    Tensor<T> dprobs = coeff_grads[e];
    if (!layer.expert_masks.empty() && !layer.expert_masks[e].empty())
      for (std::size_t b = 0; b < dprobs.rows(); ++b)
        for (std::size_t n = 0; n < dprobs.cols(); ++n)
          if (!layer.expert_masks[e][n]) dprobs(b, n) = T{0};
    const Tensor<T> dnormed = simplex_rows_vjp(layer.config.gate_activation, cache.probs[e], dprobs);
    NormGrads<T> ng = normalize_backward(gate.norm, cache.norm[e], dnormed);
    const Tensor<T>& dlogits = ng.input;
    g.params.push_back(matmul(transpose(z), dlogits));
    if (gate.norm.kind != NormKind::none) {
      g.params.push_back(std::move(ng.gamma));
      g.params.push_back(std::move(ng.beta));
    }
    const Tensor<T> dz = matmul(dlogits, transpose(gate.weight));
    for (std::size_t k = 0; k < dz.size(); ++k) g.input[k] = static_cast<T>(double(g.input[k]) + double(dz[k]));
  }
  return g;
}

// ---------------------------------------------------------------------------
// Multilinear forward passes

template <typename T>
Tensor<T> dense_forward(const DenseWeights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                        MultilinearCache<T>* cache) {
  const Weights<T> view = w;  // cheap relative to the contraction at desk scale
  check_input(view, coeffs, zf);
  const auto dims = expert_counts(view);
  const std::size_t cells = shape_volume(dims);
  const std::size_t in = zf.cols();
  const std::size_t out = w.w.shape().back();
  const std::size_t batch = zf.rows();

  Tensor<T> y({batch, out});
  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> acc(out);
    for (std::size_t b = lo; b < hi; ++b) {
      std::fill(acc.begin(), acc.end(), 0.0);
      GridWalker grid(dims);
      for (std::size_t cell = 0; cell < cells; ++cell, grid.advance()) {
        double c = 1.0;
        for (std::size_t e = 0; e < dims.size(); ++e) c *= double(coeffs.levels[e](b, grid.idx[e]));
        if (c == 0.0) continue;
        const T* slab = &w.w[cell * in * out];
        for (std::size_t i = 0; i < in; ++i) {
          const double ci = c * double(zf(b, i));
          if (ci == 0.0) continue;
          for (std::size_t o = 0; o < out; ++o) acc[o] += ci * double(slab[i * out + o]);
        }
      }
      for (std::size_t o = 0; o < out; ++o) y(b, o) = static_cast<T>(acc[o]);
    }
  });
  if (cache) {
    cache->coeffs = coeffs;
    cache->input = zf;
    cache->cp_proj.clear();
    cache->tr_mats.clear();
  }
  return y;
}

template <typename T>
Tensor<T> cp_forward(const CpWeights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                     MultilinearCache<T>* cache) {
  if (w.factors.size() < 3) throw ShapeError("cp weights need at least three factors");
  const std::size_t levels = w.factors.size() - 2;
  const std::size_t rank = w.factors[0].rows();
  for (const auto& f : w.factors)
    if (f.order() != 2 || f.rows() != rank) throw ShapeError("cp factors must share rank");
  {
    std::vector<std::size_t> dims;
    for (std::size_t e = 0; e < levels; ++e) dims.push_back(w.factors[e].cols());
    if (zf.order() != 2 || zf.cols() != w.factors[levels].cols())
      throw ShapeError("cp input has wrong width " + shape_string(zf.shape()));
    check_coefficients(coeffs, dims, zf.rows());
  }
  const Tensor<T>& u_in = w.factors[levels];
  const Tensor<T>& u_out = w.factors[levels + 1];
  const std::size_t batch = zf.rows(), in = zf.cols(), out = u_out.cols();

  // Projections U_e a_e and U_in z for every row.
  std::vector<Tensor<T>> proj(levels + 1, Tensor<T>({batch, rank}));
  Tensor<T> y({batch, out});
  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> h(rank);
    for (std::size_t b = lo; b < hi; ++b) {
      std::fill(h.begin(), h.end(), 1.0);
      for (std::size_t e = 0; e <= levels; ++e) {
        const Tensor<T>& u = w.factors[e];
        const std::size_t n = u.cols();
        for (std::size_t r = 0; r < rank; ++r) {
          double acc = 0.0;
          if (e < levels)
            for (std::size_t k = 0; k < n; ++k) acc += double(u(r, k)) * double(coeffs.levels[e](b, k));
          else
            for (std::size_t k = 0; k < in; ++k) acc += double(u_in(r, k)) * double(zf(b, k));
          proj[e](b, r) = static_cast<T>(acc);
          h[r] *= acc;
        }
      }
      for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t r = 0; r < rank; ++r) acc += h[r] * double(u_out(r, o));
        y(b, o) = static_cast<T>(acc);
      }
    }
  });
  if (cache) {
    cache->coeffs = coeffs;
    cache->input = zf;
    cache->cp_proj = std::move(proj);
    cache->tr_mats.clear();
  }
  return y;
}

template <typename T>
Tensor<T> tr_forward(const TrWeights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                     MultilinearCache<T>* cache) {
  check_ring<T>(w.cores);
  if (w.cores.size() < 3) throw ShapeError("tr weights need at least three cores");
  const std::size_t levels = w.cores.size() - 2;
  {
    std::vector<std::size_t> dims;
    for (std::size_t e = 0; e < levels; ++e) dims.push_back(w.cores[e].extent(1));
    if (zf.order() != 2 || zf.cols() != w.cores[levels].extent(1))
      throw ShapeError("tr input has wrong width " + shape_string(zf.shape()));
    check_coefficients(coeffs, dims, zf.rows());
  }
  const Tensor<T>& u_out = w.cores[levels + 1];
  const std::size_t batch = zf.rows(), out = u_out.extent(1);
  const std::size_t r_first = w.cores[0].extent(0), r_last = u_out.extent(0);

  std::vector<Tensor<T>> mats;
  for (std::size_t k = 0; k <= levels; ++k)
    mats.emplace_back(Shape{batch, w.cores[k].extent(0), w.cores[k].extent(2)});
  Tensor<T> chain_all({batch, r_first, r_last});
  Tensor<T> y({batch, out});

  parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      Mat chain;
      for (std::size_t k = 0; k <= levels; ++k) {
        const Tensor<T>& core = w.cores[k];
        const std::size_t p_dim = core.extent(0), n_dim = core.extent(1), q_dim = core.extent(2);
        Mat m(p_dim, q_dim);
        for (std::size_t p = 0; p < p_dim; ++p)
          for (std::size_t q = 0; q < q_dim; ++q) {
            double acc = 0.0;
            for (std::size_t n = 0; n < n_dim; ++n) {
              const double v = k < levels ? double(coeffs.levels[k](b, n)) : double(zf(b, n));
              acc += double(core(p, n, q)) * v;
            }
            m(p, q) = acc;
            mats[k](b, p, q) = static_cast<T>(acc);
          }
        chain = k == 0 ? std::move(m) : mul(chain, m);
      }
      for (std::size_t p = 0; p < r_first; ++p)
        for (std::size_t q = 0; q < r_last; ++q) chain_all(b, p, q) = static_cast<T>(chain(p, q));
      for (std::size_t o = 0; o < out; ++o) {
        double acc = 0.0;
        for (std::size_t p = 0; p < r_first; ++p)
          for (std::size_t q = 0; q < r_last; ++q) acc += chain(p, q) * double(u_out(q, o, p));
        y(b, o) = static_cast<T>(acc);
      }
    }
  });
  if (cache) {
    cache->coeffs = coeffs;
    cache->input = zf;
    cache->cp_proj.clear();
    cache->tr_mats = std::move(mats);
    cache->tr_chain = std::move(chain_all);
  }
  return y;
}

template <typename T>
Tensor<T> multilinear_forward(const Weights<T>& w, const ExpertCoefficients<T>& coeffs, const Tensor<T>& zf,
                              MultilinearCache<T>* cache) {
  return std::visit(overloaded{
                        [&](const DenseWeights<T>& d) { return dense_forward(d, coeffs, zf, cache); },
                        [&](const CpWeights<T>& c) { return cp_forward(c, coeffs, zf, cache); },
                        [&](const TrWeights<T>& t) { return tr_forward(t, coeffs, zf, cache); },
                    },
                    w);
}

// ---------------------------------------------------------------------------
// Multilinear backward passes

namespace {

template <typename T>
void add_to(Tensor<T>& t, std::size_t flat, double v) {
  t[flat] = static_cast<T>(double(t[flat]) + v);
}

template <typename T>
MultilinearGrads<T> dense_backward(const DenseWeights<T>& w, const MultilinearCache<T>& cache,
                                   const Tensor<T>& g) {
  const auto& zf = cache.input;
  const auto& coeffs = cache.coeffs;
  const Shape& ws = w.w.shape();
  const std::vector<std::size_t> dims(ws.begin(), ws.end() - 2);
  const std::size_t levels = dims.size(), cells = shape_volume(dims);
  const std::size_t in = zf.cols(), out = ws.back(), batch = zf.rows();

  MultilinearGrads<T> grads;
  Tensor<T> dw(ws);
  grads.input = Tensor<T>(zf.shape());
  for (std::size_t e = 0; e < levels; ++e) grads.coeffs.emplace_back(Shape{batch, dims[e]});

  std::vector<double> dz(in);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(dz.begin(), dz.end(), 0.0);
    GridWalker grid(dims);
    for (std::size_t cell = 0; cell < cells; ++cell, grid.advance()) {
      double c = 1.0;
      for (std::size_t e = 0; e < levels; ++e) c *= double(coeffs.levels[e](b, grid.idx[e]));
      const std::size_t base = cell * in * out;
      // q = z^T W_n g, shared by every level's coefficient gradient.
      double q = 0.0;
      for (std::size_t i = 0; i < in; ++i) {
        const double zi = double(zf(b, i));
        double wg = 0.0;
        for (std::size_t o = 0; o < out; ++o) {
          const double go = double(g(b, o));
          wg += double(w.w[base + i * out + o]) * go;
          add_to(dw, base + i * out + o, c * zi * go);
        }
        dz[i] += c * wg;
        q += zi * wg;
      }
      for (std::size_t e = 0; e < levels; ++e) {
        double others = 1.0;
        for (std::size_t f = 0; f < levels; ++f)
          if (f != e) others *= double(coeffs.levels[f](b, grid.idx[f]));
        add_to(grads.coeffs[e], b * dims[e] + grid.idx[e], q * others);
      }
    }
    for (std::size_t i = 0; i < in; ++i) grads.input(b, i) = static_cast<T>(dz[i]);
  }
  grads.weights.push_back(std::move(dw));
  return grads;
}

template <typename T>
MultilinearGrads<T> cp_backward(const CpWeights<T>& w, const MultilinearCache<T>& cache, const Tensor<T>& g) {
  const std::size_t levels = w.factors.size() - 2;
  if (cache.cp_proj.size() != levels + 1) throw UsageError("stale cache: not produced by a cp forward");
  const auto& zf = cache.input;
  const auto& coeffs = cache.coeffs;
  const std::size_t rank = w.factors[0].rows();
  const std::size_t batch = zf.rows(), in = zf.cols();
  const Tensor<T>& u_in = w.factors[levels];
  const Tensor<T>& u_out = w.factors[levels + 1];
  const std::size_t out = u_out.cols();

  MultilinearGrads<T> grads;
  for (const auto& f : w.factors) grads.weights.emplace_back(f.shape());
  grads.input = Tensor<T>(zf.shape());
  for (std::size_t e = 0; e < levels; ++e) grads.coeffs.emplace_back(Shape{batch, w.factors[e].cols()});
  Tensor<T>& d_out = grads.weights[levels + 1];
  Tensor<T>& d_in = grads.weights[levels];

  std::vector<double> t(rank), dproj(rank);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < rank; ++r) {
      double h = 1.0;
      for (std::size_t k = 0; k <= levels; ++k) h *= double(cache.cp_proj[k](b, r));
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        add_to(d_out, r * out + o, h * double(g(b, o)));
        acc += double(u_out(r, o)) * double(g(b, o));
      }
      t[r] = acc;
    }
    for (std::size_t k = 0; k <= levels; ++k) {
      for (std::size_t r = 0; r < rank; ++r) {
        double others = t[r];
        for (std::size_t j = 0; j <= levels; ++j)
          if (j != k) others *= double(cache.cp_proj[j](b, r));
        dproj[r] = others;
      }
      if (k < levels) {
        const Tensor<T>& u = w.factors[k];
        const std::size_t n = u.cols();
        for (std::size_t m = 0; m < n; ++m) {
          const double a = double(coeffs.levels[k](b, m));
          double da = 0.0;
          for (std::size_t r = 0; r < rank; ++r) {
            add_to(grads.weights[k], r * n + m, dproj[r] * a);
            da += double(u(r, m)) * dproj[r];
          }
          grads.coeffs[k](b, m) = static_cast<T>(da);
        }
      } else {
        for (std::size_t i = 0; i < in; ++i) {
          const double zi = double(zf(b, i));
          double dz = 0.0;
          for (std::size_t r = 0; r < rank; ++r) {
            add_to(d_in, r * in + i, dproj[r] * zi);
            dz += double(u_in(r, i)) * dproj[r];
          }
          grads.input(b, i) = static_cast<T>(dz);
        }
      }
    }
  }
  return grads;
}

template <typename T>
MultilinearGrads<T> tr_backward(const TrWeights<T>& w, const MultilinearCache<T>& cache, const Tensor<T>& g) {
  const std::size_t levels = w.cores.size() - 2;
  if (cache.tr_mats.size() != levels + 1) throw UsageError("stale cache: not produced by a tr forward");
  const auto& zf = cache.input;
  const auto& coeffs = cache.coeffs;
  const std::size_t batch = zf.rows();
  const Tensor<T>& u_out = w.cores[levels + 1];
  const std::size_t out = u_out.extent(1);
  const std::size_t r_first = w.cores[0].extent(0), r_last = u_out.extent(0);

  MultilinearGrads<T> grads;
  for (const auto& c : w.cores) grads.weights.emplace_back(c.shape());
  grads.input = Tensor<T>(zf.shape());
  for (std::size_t e = 0; e < levels; ++e) grads.coeffs.emplace_back(Shape{batch, w.cores[e].extent(1)});
  Tensor<T>& d_out = grads.weights[levels + 1];

  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<Mat> mats;
    for (std::size_t k = 0; k <= levels; ++k) mats.push_back(slice_of(cache.tr_mats[k], b));
    const Mat chain = slice_of(cache.tr_chain, b);

    Mat dchain(r_first, r_last);
    for (std::size_t p = 0; p < r_first; ++p)
      for (std::size_t q = 0; q < r_last; ++q) {
        double acc = 0.0;
        for (std::size_t o = 0; o < out; ++o) {
          const double go = double(g(b, o));
          acc += go * double(u_out(q, o, p));
          add_to(d_out, (q * out + o) * r_first + p, chain(p, q) * go);
        }
        dchain(p, q) = acc;
      }

    // prefix[k] = M_0 ... M_{k-1}, suffix[k] = M_{k+1} ... M_levels
    std::vector<Mat> prefix(levels + 1), suffix(levels + 1);
    prefix[0] = Mat::identity(r_first);
    for (std::size_t k = 1; k <= levels; ++k) prefix[k] = mul(prefix[k - 1], mats[k - 1]);
    suffix[levels] = Mat::identity(r_last);
    for (std::size_t k = levels; k-- > 0;) suffix[k] = mul(mats[k + 1], suffix[k + 1]);

    for (std::size_t k = 0; k <= levels; ++k) {
      const Mat dm = mul_nt(mul_tn(prefix[k], dchain), suffix[k]);
      const Tensor<T>& core = w.cores[k];
      const std::size_t p_dim = core.extent(0), n_dim = core.extent(1), q_dim = core.extent(2);
      for (std::size_t n = 0; n < n_dim; ++n) {
        const double v = k < levels ? double(coeffs.levels[k](b, n)) : double(zf(b, n));
        double dv = 0.0;
        for (std::size_t p = 0; p < p_dim; ++p)
          for (std::size_t q = 0; q < q_dim; ++q) {
            add_to(grads.weights[k], (p * n_dim + n) * q_dim + q, v * dm(p, q));
            dv += double(core(p, n, q)) * dm(p, q);
          }
        if (k < levels) grads.coeffs[k](b, n) = static_cast<T>(dv);
        else grads.input(b, n) = static_cast<T>(dv);
      }
    }
  }
  return grads;
}

}  // namespace

template <typename T>
MultilinearGrads<T> multilinear_backward(const Weights<T>& w, const MultilinearCache<T>& cache,
                                         const Tensor<T>& upstream) {
  if (cache.input.empty()) throw UsageError("backward called without a forward cache");
  const auto [in, out] = io_dims(w);
  if (cache.input.cols() != in) throw UsageError("stale cache: input width differs from weights");
  if (upstream.order() != 2 || upstream.rows() != cache.input.rows() || upstream.cols() != out)
    throw UsageError("upstream gradient shape " + shape_string(upstream.shape()) + " does not match forward output");
  return std::visit(overloaded{
                        [&](const DenseWeights<T>& d) { return dense_backward(d, cache, upstream); },
                        [&](const CpWeights<T>& c) { return cp_backward(c, cache, upstream); },
                        [&](const TrWeights<T>& t) { return tr_backward(t, cache, upstream); },
                    },
                    w);
}

// ---------------------------------------------------------------------------
// Layer-level composition

template <typename T>
Tensor<T> forward(const MoeLayer<T>& layer, const Tensor<T>& z, Mode mode, ForwardCache<T>* cache) {
  const ExpertCoefficients<T> coeffs = gate_coefficients(layer, z, mode, cache ? &cache->gate : nullptr);
  const Tensor<T> zf = layer.config.bias ? fold_bias(z) : z;
  return multilinear_forward(layer.weights, coeffs, zf, cache ? &cache->multilinear : nullptr);
}

template <typename T>
Tensor<T> forward_with_coefficients(const MoeLayer<T>& layer, const ExpertCoefficients<T>& coeffs,
                                    const Tensor<T>& z, MultilinearCache<T>* cache) {
  if (z.order() != 2 || z.cols() != layer.config.input_dim)
    throw ShapeError("layer input must be B x " + std::to_string(layer.config.input_dim) + ", got " +
                     shape_string(z.shape()));
  const Tensor<T> zf = layer.config.bias ? fold_bias(z) : z;
  if (layer.expert_masks.empty()) return multilinear_forward(layer.weights, coeffs, zf, cache);
  ExpertCoefficients<T> masked = coeffs;
  for (std::size_t e = 0; e < masked.levels.size() && e < layer.expert_masks.size(); ++e) {
    const auto& mask = layer.expert_masks[e];
    if (mask.empty()) continue;
    for (std::size_t b = 0; b < masked.levels[e].rows(); ++b)
      for (std::size_t n = 0; n < mask.size() && n < masked.levels[e].cols(); ++n)
        if (!mask[n]) masked.levels[e](b, n) = T{0};
  }
  return multilinear_forward(layer.weights, masked, zf, cache);
}

template <typename T>
LayerGrads<T> backward(const MoeLayer<T>& layer, const ForwardCache<T>& cache, const Tensor<T>& upstream) {
  MultilinearGrads<T> ml = multilinear_backward(layer.weights, cache.multilinear, upstream);
  LayerGrads<T> grads;
  const std::size_t in = layer.config.input_dim;
  grads.input = Tensor<T>({upstream.rows(), in});
  for (std::size_t b = 0; b < upstream.rows(); ++b)
    for (std::size_t i = 0; i < in; ++i) grads.input(b, i) = ml.input(b, i);
  if (layer.config.gated) {
    GateGrads<T> gg = gate_backward(layer, cache.gate, ml.coeffs);
    for (std::size_t k = 0; k < gg.input.size(); ++k)
      grads.input[k] = static_cast<T>(double(grads.input[k]) + double(gg.input[k]));
    for (auto& p : gg.params) grads.params.push_back(std::move(p));
  }
  for (auto& p : ml.weights) grads.params.push_back(std::move(p));
  return grads;
}

template <typename T>
void commit_running_stats(MoeLayer<T>& layer, const GateCache<T>& cache) {
  if (cache.mode != Mode::training) return;
  for (std::size_t e = 0; e < layer.gates.size() && e < cache.norm.size(); ++e)
    update_running_stats(layer.gates[e].norm, cache.norm[e], cache.input.rows());
}

// ---------------------------------------------------------------------------
// Materialization

template <typename T>
Tensor<T> materialize_weights(const MoeLayer<T>& layer) {
  const Shape shape = layer.config.weight_shape();
  return std::visit(overloaded{
                        [&](const DenseWeights<T>& d) { return d.w; },
                        [&](const CpWeights<T>& c) { return cp_materialize<T>(c.factors, shape); },
                        [&](const TrWeights<T>& t) { return tr_materialize<T>(t.cores); },
                    },
                    layer.weights);
}

template <typename T>
Tensor<T> materialize_expert(const MoeLayer<T>& layer, std::span<const std::size_t> expert) {
  const auto& cfg = layer.config;
  const std::size_t levels = cfg.levels();
  if (expert.size() != levels)
    throw UsageError("expert index needs " + std::to_string(levels) + " entries, got " + std::to_string(expert.size()));
  for (std::size_t e = 0; e < levels; ++e)
    if (expert[e] >= cfg.experts[e])
      throw UsageError("expert index " + std::to_string(expert[e]) + " out of range at level " +
                       std::to_string(e + 1) + " (N=" + std::to_string(cfg.experts[e]) + ")");
  const std::size_t in = cfg.folded_input_dim(), out = cfg.output_dim;

  return std::visit(
      overloaded{
          [&](const DenseWeights<T>& d) {
            std::size_t cell = 0;
            for (std::size_t e = 0; e < levels; ++e) cell = cell * cfg.experts[e] + expert[e];
            Tensor<T> w({in, out});
            std::copy_n(d.w.data().begin() + cell * in * out, in * out, w.data().begin());
            return w;
          },
          [&](const CpWeights<T>& c) {
            // W_n = U_in^T (d^T (.) U_out^T)^T with d_r = prod_e U_e(r, n_e).
            const std::size_t rank = cfg.cp_rank;
            Tensor<T> d({1, rank});
            for (std::size_t r = 0; r < rank; ++r) {
              double prod = 1.0;
              for (std::size_t e = 0; e < levels; ++e) prod *= double(c.factors[e](r, expert[e]));
              d(0, r) = static_cast<T>(prod);
            }
            const Tensor<T> kr = khatri_rao(d, transpose(c.factors[levels + 1]));  // O x R
            return matmul(transpose(c.factors[levels]), transpose(kr));
          },
          [&](const TrWeights<T>& t) {
            // W_n = sum_q (U_out(q,:,:) M_n U_in(:,:,q))^T, M_n the product of
            // the expert-mode lateral slices.
            const std::size_t r1 = t.cores[0].extent(0);
            Mat m = Mat::identity(r1);
            for (std::size_t e = 0; e < levels; ++e) {
              const auto& core = t.cores[e];
              Mat s(core.extent(0), core.extent(2));
              for (std::size_t p = 0; p < s.rows; ++p)
                for (std::size_t q = 0; q < s.cols; ++q) s(p, q) = double(core(p, expert[e], q));
              m = mul(m, s);
            }
            const auto& u_in = t.cores[levels];
            const auto& u_out = t.cores[levels + 1];
            const std::size_t r_mid = u_in.extent(0), r_last = u_in.extent(2);
            Tensor<T> w({in, out});
            std::vector<double> acc(in * out, 0.0);
            for (std::size_t q = 0; q < r_last; ++q) {
              Mat a(out, r1);
              for (std::size_t o = 0; o < out; ++o)
                for (std::size_t p = 0; p < r1; ++p) a(o, p) = double(u_out(q, o, p));
              Mat bq(r_mid, in);
              for (std::size_t p = 0; p < r_mid; ++p)
                for (std::size_t i = 0; i < in; ++i) bq(p, i) = double(u_in(p, i, q));
              const Mat term = mul(mul(a, m), bq);  // O x I
              for (std::size_t o = 0; o < out; ++o)
                for (std::size_t i = 0; i < in; ++i) acc[i * out + o] += term(o, i);
            }
            for (std::size_t k = 0; k < acc.size(); ++k) w[k] = static_cast<T>(acc[k]);
            return w;
          },
      },
      layer.weights);
}

#define MUMOE_INSTANTIATE(T)                                                                                   \
  template struct MoeLayer<T>;                                                                                 \
  template Tensor<T> fold_bias(const Tensor<T>&);                                                              \
  template ExpertCoefficients<T> gate_coefficients(const MoeLayer<T>&, const Tensor<T>&, Mode, GateCache<T>*); \
  template Tensor<T> dense_forward(const DenseWeights<T>&, const ExpertCoefficients<T>&, const Tensor<T>&,     \
                                   MultilinearCache<T>*);                                                      \
  template Tensor<T> cp_forward(const CpWeights<T>&, const ExpertCoefficients<T>&, const Tensor<T>&,           \
                                MultilinearCache<T>*);                                                         \
  template Tensor<T> tr_forward(const TrWeights<T>&, const ExpertCoefficients<T>&, const Tensor<T>&,           \
                                MultilinearCache<T>*);                                                         \
  template Tensor<T> multilinear_forward(const Weights<T>&, const ExpertCoefficients<T>&, const Tensor<T>&,    \
                                         MultilinearCache<T>*);                                                \
  template MultilinearGrads<T> multilinear_backward(const Weights<T>&, const MultilinearCache<T>&,             \
                                                    const Tensor<T>&);                                         \
  template GateGrads<T> gate_backward(const MoeLayer<T>&, const GateCache<T>&, const std::vector<Tensor<T>>&); \
  template Tensor<T> forward(const MoeLayer<T>&, const Tensor<T>&, Mode, ForwardCache<T>*);                    \
  template Tensor<T> forward_with_coefficients(const MoeLayer<T>&, const ExpertCoefficients<T>&,               \
                                               const Tensor<T>&, MultilinearCache<T>*);                        \
  template LayerGrads<T> backward(const MoeLayer<T>&, const ForwardCache<T>&, const Tensor<T>&);               \
  template void commit_running_stats(MoeLayer<T>&, const GateCache<T>&);                                       \
  template Tensor<T> materialize_weights(const MoeLayer<T>&);                                                  \
  template Tensor<T> materialize_expert(const MoeLayer<T>&, std::span<const std::size_t>);

MUMOE_INSTANTIATE(float)
MUMOE_INSTANTIATE(double)

#undef MUMOE_INSTANTIATE

}  // namespace mumoe
