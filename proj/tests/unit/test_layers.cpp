#include <gtest/gtest.h>

#include <cmath>

#include "mumoe/init.hpp"
#include "mumoe/model.hpp"
#include "mumoe/moe_layer.hpp"
#include "mumoe/svd.hpp"
#include "oracles.hpp"

using namespace mumoe;

namespace {

LayerConfig make_config(LayerKind kind, std::size_t in, std::size_t out, std::vector<std::size_t> experts,
                        std::size_t rank = 2, bool bias = false) {
  LayerConfig c;
  c.kind = kind;
  c.input_dim = in;
  c.output_dim = out;
  c.experts = std::move(experts);
  c.bias = bias;
  if (kind == LayerKind::cp) c.cp_rank = rank;
  if (kind == LayerKind::tr) c.tr_ranks.assign(c.experts.size() + 2, rank);
  return c;
}

MoeLayer<double> make_layer(const LayerConfig& c, std::uint64_t seed = 1) {
  InitConfig init;
  init.seed = seed;
  init.sigma.assign(c.levels(), 1.0);
  return init_layer<double>(c, init);
}

ExpertCoefficients<double> one_hot(const LayerConfig& c, const std::vector<std::size_t>& idx, std::size_t batch) {
  ExpertCoefficients<double> a;
  for (std::size_t e = 0; e < c.levels(); ++e) {
    Tensor<double> t({batch, c.experts[e]});
    for (std::size_t b = 0; b < batch; ++b) t(b, idx[e]) = 1.0;
    a.levels.push_back(t);
  }
  return a;
}

const LayerKind kKinds[] = {LayerKind::dense, LayerKind::cp, LayerKind::tr};

}  // namespace

TEST(Gating, ZeroGateGivesUniform) {
  auto layer = make_layer(make_config(LayerKind::cp, 3, 2, {4, 5}));
  for (auto& g : layer.gates) g.weight.fill(0.0);
  oracle::Rng rng(41);
  const auto a = gate_coefficients(layer, oracle::gaussian(rng, {3, 3}), Mode::eval);
  for (std::size_t e = 0; e < 2; ++e)
    for (double v : a.levels[e].data()) EXPECT_NEAR(v, 1.0 / double(layer.config.experts[e]), 1e-15);
}

TEST(Gating, LargeLogitIsOneHot) {
  auto layer = make_layer(make_config(LayerKind::cp, 2, 2, {3}));
  layer.gates[0].weight = Tensor<double>::matrix({{0, 10, 0}, {0, 0, 0}});
  const auto a = gate_coefficients(layer, Tensor<double>::matrix({{1.0, 0.5}}), Mode::eval);
  EXPECT_EQ(a.levels[0].values(), (std::vector<double>{0, 1, 0}));
}

TEST(Gating, ColumnPermutationPermutesCoefficients) {
  auto layer = make_layer(make_config(LayerKind::cp, 4, 2, {5}));
  oracle::Rng rng(42);
  const auto z = oracle::gaussian(rng, {6, 4});
  const auto a = gate_coefficients(layer, z, Mode::eval).levels[0];
  const std::size_t perm[] = {3, 0, 4, 1, 2};
  auto permuted = layer;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t n = 0; n < 5; ++n) permuted.gates[0].weight(i, n) = layer.gates[0].weight(i, perm[n]);
  const auto b = gate_coefficients(permuted, z, Mode::eval).levels[0];
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t n = 0; n < 5; ++n) EXPECT_EQ(b(r, n), a(r, perm[n]));
}

TEST(Gating, UngatedLayerRefusesGating) {
  auto c = make_config(LayerKind::cp, 2, 2, {3});
  c.gated = false;
  const auto layer = make_layer(c);
  EXPECT_TRUE(layer.gates.empty());
  EXPECT_THROW(gate_coefficients(layer, Tensor<double>({1, 2}), Mode::eval), UsageError);
}

TEST(Forward, SingleExpertDenseIsAffine) {
  const auto c = make_config(LayerKind::dense, 3, 2, {1}, 0, true);
  const auto layer = make_layer(c);
  oracle::Rng rng(43);
  const auto z = oracle::gaussian(rng, {4, 3});
  const auto y = forward(layer, z, Mode::eval);
  const auto& w = std::get<DenseWeights<double>>(layer.weights).w;
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = w(0, 3, o);
      for (std::size_t i = 0; i < 3; ++i) s += w(0, i, o) * z(b, i);
      EXPECT_NEAR(y(b, o), s, 1e-14);
    }
}

TEST(Forward, BasisCoefficientSelectsExpert) {
  oracle::Rng rng(44);
  for (LayerKind kind : kKinds)
    for (int rep = 0; rep < 20; ++rep) {
      const auto c = oracle::random_config(rng, kind, 6);
      const auto layer = make_layer(c, rng());
      std::vector<std::size_t> idx;
      for (auto n : c.experts) idx.push_back(oracle::pick(rng, 0, n - 1));
      const auto z = oracle::gaussian(rng, {3, c.input_dim});
      const auto y = forward_with_coefficients(layer, one_hot(c, idx, 3), z);
      const auto w = materialize_expert<double>(layer, idx);
      const auto zf = c.bias ? fold_bias(z) : z;
      const auto want = matmul(zf, w);
      EXPECT_LE(oracle::rel_l2(y, want), 1e-10);
    }
}

TEST(Forward, CpRankOneClosedForm) {
  const auto c = make_config(LayerKind::cp, 3, 2, {4}, 1);
  const auto layer = make_layer(c);
  const auto& f = std::get<CpWeights<double>>(layer.weights).factors;
  oracle::Rng rng(45);
  const auto z = oracle::gaussian(rng, {1, 3});
  const auto a = oracle::simplex_matrix(rng, 1, 4);
  const auto y = forward_with_coefficients(layer, ExpertCoefficients<double>{{a}}, z);
  double ua = 0.0, uz = 0.0;
  for (std::size_t n = 0; n < 4; ++n) ua += f[0](0, n) * a(0, n);
  for (std::size_t i = 0; i < 3; ++i) uz += f[1](0, i) * z(0, i);
  for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(y(0, o), f[2](0, o) * ua * uz, 1e-14);
}

TEST(Forward, CpDegenerateLevelContractsOut) {
  const auto c2 = make_config(LayerKind::cp, 3, 2, {4, 1}, 3);
  const auto deep = make_layer(c2);
  auto c1 = c2;
  c1.experts = {4};
  auto flat = make_layer(c1);
  const auto& fd = std::get<CpWeights<double>>(deep.weights).factors;
  auto& ff = std::get<CpWeights<double>>(flat.weights).factors;
  ff[0] = fd[0];
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t n = 0; n < 4; ++n) ff[0](r, n) *= fd[1](r, 0);
  ff[1] = fd[2];
  ff[2] = fd[3];
  oracle::Rng rng(46);
  const auto z = oracle::gaussian(rng, {5, 3});
  const auto a = oracle::simplex_matrix(rng, 5, 4);
  const auto y2 = forward_with_coefficients(deep, ExpertCoefficients<double>{{a, Tensor<double>({5, 1}, 1.0)}}, z);
  const auto y1 = forward_with_coefficients(flat, ExpertCoefficients<double>{{a}}, z);
  EXPECT_LE(oracle::rel_l2(y2, y1), 1e-14);
}

TEST(Forward, TrUnitRanks) {
  const auto c = make_config(LayerKind::tr, 2, 3, {2}, 1);
  const auto layer = make_layer(c);
  const auto& u = std::get<TrWeights<double>>(layer.weights).cores;
  const auto z = Tensor<double>::matrix({{0.5, -1.5}});
  const auto a = Tensor<double>::matrix({{0.25, 0.75}});
  const auto y = forward_with_coefficients(layer, ExpertCoefficients<double>{{a}}, z);
  const double sa = u[0](0, 0, 0) * 0.25 + u[0](0, 1, 0) * 0.75;
  const double sz = u[1](0, 0, 0) * 0.5 - u[1](0, 1, 0) * 1.5;
  for (std::size_t o = 0; o < 3; ++o) EXPECT_NEAR(y(0, o), sa * sz * u[2](0, o, 0), 1e-14);
}

TEST(Forward, LinearInInputWithoutBias) {
  oracle::Rng rng(47);
  for (LayerKind kind : kKinds) {
    auto c = oracle::random_config(rng, kind, 6);
    c.bias = false;
    const auto layer = make_layer(c, rng());
    ExpertCoefficients<double> a;
    for (auto n : c.experts) a.levels.push_back(oracle::simplex_matrix(rng, 2, n));
    const auto z1 = oracle::gaussian(rng, {2, c.input_dim}), z2 = oracle::gaussian(rng, {2, c.input_dim});
    Tensor<double> mix = z1;
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * z1[i] - 0.5 * z2[i];
    const auto y1 = forward_with_coefficients(layer, a, z1), y2 = forward_with_coefficients(layer, a, z2);
    const auto ym = forward_with_coefficients(layer, a, mix);
    for (std::size_t i = 0; i < ym.size(); ++i) EXPECT_NEAR(ym[i], 2.0 * y1[i] - 0.5 * y2[i], 1e-12);
  }
}

TEST(Forward, WrongInputWidthThrows) {
  const auto layer = make_layer(make_config(LayerKind::cp, 3, 2, {2}));
  EXPECT_THROW(forward(layer, Tensor<double>({2, 4}), Mode::eval), ShapeError);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  oracle::Rng rng(48);
  for (LayerKind kind : kKinds) {
    auto c = oracle::random_config(rng, kind, 5);
    c.gate_norm = NormKind::batch;
    const auto layer = make_layer(c, rng());
    const auto z = oracle::gaussian(rng, {3, c.input_dim});
    ForwardCache<double> cache;
    const auto y = forward(layer, z, Mode::training, &cache);
    const auto g = backward(layer, cache, Tensor<double>(y.shape()));
    for (const auto& t : g.params)
      for (double v : t.data()) EXPECT_EQ(v, 0.0);
    for (double v : g.input.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Backward, CpGradientsFollowFromDenseGradients) {
  oracle::Rng rng(49);
  const auto c = make_config(LayerKind::cp, 3, 2, {3}, 2, true);
  const auto cp = make_layer(c);
  auto dc = c;
  dc.kind = LayerKind::dense;
  MoeLayer<double> dense = make_layer(dc);
  dense.gates = cp.gates;
  dense.weights = DenseWeights<double>{materialize_weights(cp)};

  const auto z = oracle::gaussian(rng, {4, 3});
  const auto up = oracle::gaussian(rng, {4, 2});
  ForwardCache<double> cc, dcache;
  forward(cp, z, Mode::training, &cc);
  forward(dense, z, Mode::training, &dcache);
  const auto gc = backward(cp, cc, up);
  const auto gd = backward(dense, dcache, up);
  const std::size_t gate_params = cp.gates.size();
  const Tensor<double>& dw = gd.params[gate_params];
  const auto& f = std::get<CpWeights<double>>(cp.weights).factors;
  // dL/dU_k(r, i_k) = sum over the other indices of dL/dW * prod_{j != k} U_j(r, i_j)
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor<double> want(f[k].shape());
    oracle::for_each_index(dw.shape(), [&](const std::vector<std::size_t>& idx) {
      for (std::size_t r = 0; r < 2; ++r) {
        double p = dw[oracle::flat_index(dw.shape(), idx)];
        for (std::size_t j = 0; j < 3; ++j)
          if (j != k) p *= f[j](r, idx[j]);
        want(r, idx[k]) += p;
      }
    });
    const auto& got = gc.params[gate_params + k];
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
  for (std::size_t i = 0; i < gd.input.size(); ++i) EXPECT_NEAR(gc.input[i], gd.input[i], 1e-12);
  EXPECT_LE(oracle::rel_l2(gc.params[0], gd.params[0]), 1e-12);
}

TEST(Backward, StaleCacheThrows) {
  const auto cp = make_layer(make_config(LayerKind::cp, 3, 2, {2}));
  const auto tr = make_layer(make_config(LayerKind::tr, 3, 2, {2}));
  oracle::Rng rng(50);
  ForwardCache<double> cache;
  const auto y = forward(cp, oracle::gaussian(rng, {2, 3}), Mode::training, &cache);
  EXPECT_THROW(backward(tr, cache, y), UsageError);
  EXPECT_THROW(backward(cp, ForwardCache<double>{}, y), UsageError);
  EXPECT_THROW(backward(cp, cache, Tensor<double>({2, 5})), UsageError);
}

TEST(MaterializeExpert, CpRankOneIsScaledOuterProduct) {
  const auto c = make_config(LayerKind::cp, 3, 2, {4}, 1);
  const auto layer = make_layer(c);
  const auto& f = std::get<CpWeights<double>>(layer.weights).factors;
  const std::vector<std::size_t> idx{2};
  const auto w = materialize_expert<double>(layer, idx);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(w(i, o), f[0](0, 2) * f[1](0, i) * f[2](0, o), 1e-15);
}

TEST(MaterializeExpert, EqualsSliceOfFullTensor) {
  oracle::Rng rng(51);
  for (LayerKind kind : kKinds)
    for (int rep = 0; rep < 20; ++rep) {
      const auto c = oracle::random_config(rng, kind, 5);
      const auto layer = make_layer(c, rng());
      const auto full = oracle::layer_tensor(layer);
      std::vector<std::size_t> idx;
      for (auto n : c.experts) idx.push_back(oracle::pick(rng, 0, n - 1));
      const auto w = materialize_expert<double>(layer, idx);
      const std::size_t in = c.folded_input_dim(), out = c.output_dim;
      std::size_t base = 0;
      for (std::size_t e = 0; e < idx.size(); ++e) base = base * c.experts[e] + idx[e];
      for (std::size_t i = 0; i < in * out; ++i) EXPECT_NEAR(w[i], full[base * in * out + i], 1e-13);
    }
}

TEST(MaterializeExpert, OutOfRangeThrows) {
  const auto layer = make_layer(make_config(LayerKind::cp, 3, 2, {4}));
  const std::vector<std::size_t> bad{4}, wrong_len{0, 0};
  EXPECT_THROW(materialize_expert<double>(layer, bad), UsageError);
  EXPECT_THROW(materialize_expert<double>(layer, wrong_len), UsageError);
}

TEST(Init, ZeroSigmaReplicatesExperts) {
  for (LayerKind kind : kKinds) {
    const auto c = make_config(kind, 4, 3, {3, 2}, 2, true);
    InitConfig init;
    init.seed = 9;
    init.sigma = {0.0, 0.0};
    const auto layer = init_layer<double>(c, init);
    const std::vector<std::size_t> first{0, 0};
    const auto w0 = materialize_expert<double>(layer, first);
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = 0; b < 2; ++b) {
        const std::vector<std::size_t> idx{a, b};
        const auto w = materialize_expert<double>(layer, idx);
        for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], w0[i], 1e-15) << to_string(kind);
      }
  }
}

TEST(Init, DeterministicInSeed) {
  for (LayerKind kind : kKinds) {
    auto c = make_config(kind, 4, 3, {5}, 3);
    c.gate_norm = NormKind::batch;
    InitConfig init;
    init.seed = 77;
    const auto a = init_layer<double>(c, init), b = init_layer<double>(c, init);
    const auto pa = a.parameters(), pb = b.parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t p = 0; p < pa.size(); ++p) EXPECT_EQ(*pa[p].tensor, *pb[p].tensor);
    init.seed = 78;
    EXPECT_NE(*init_layer<double>(c, init).parameters().back().tensor, *pa.back().tensor);
  }
}

TEST(Init, RangesFollowFanIn) {
  const auto c = make_config(LayerKind::cp, 9, 5, {6}, 4, true);
  const auto layer = make_layer(c);
  const auto& f = std::get<CpWeights<double>>(layer.weights).factors;
  for (double v : layer.gates[0].weight.data()) EXPECT_LE(std::abs(v), std::sqrt(1.0 / 9));
  for (double v : f[1].data()) EXPECT_LE(std::abs(v), std::sqrt(1.0 / 10));
  for (double v : f[2].data()) EXPECT_LE(std::abs(v), std::sqrt(1.0 / 4));
  const auto tc = make_config(LayerKind::tr, 9, 5, {6}, 3, true);
  const auto tl = make_layer(tc);
  const auto& cores = std::get<TrWeights<double>>(tl.weights).cores;
  // expert core lateral slices are diagonal
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t n = 0; n < 6; ++n)
      for (std::size_t b = 0; b < 3; ++b)
        if (a != b) EXPECT_EQ(cores[0](a, n, b), 0.0);
}

TEST(Init, CpExpertsShareColumnSpace) {
  const auto c = make_config(LayerKind::cp, 7, 6, {4}, 3);
  const auto layer = make_layer(c);
  Tensor<double> stacked({7, 6 * 4});
  for (std::size_t n = 0; n < 4; ++n) {
    const std::vector<std::size_t> idx{n};
    const auto w = materialize_expert<double>(layer, idx);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t o = 0; o < 6; ++o) stacked(i, n * 6 + o) = w(i, o);
    if (n > 0) {
      const std::vector<std::size_t> zero{0};
      EXPECT_GT(relative_error(w, materialize_expert<double>(layer, zero)), 1e-3);
    }
  }
  EXPECT_EQ(numerical_rank(stacked), 3u);
}

namespace {

Model<double> make_block(LayerKind kind, std::size_t in, std::size_t hidden, std::size_t out, std::size_t experts,
                         Pointwise act = Pointwise::gelu) {
  Model<double> m;
  m.first = make_layer(make_config(kind, in, hidden, {experts}, 2, true), 3);
  auto c2 = make_config(kind, hidden, out, {experts}, 2, true);
  c2.gated = false;
  m.second = make_layer(c2, 4);
  m.hidden = act;
  return m;
}

}  // namespace

TEST(Block, SingleExpertIsMlp) {
  const auto m = make_block(LayerKind::cp, 3, 4, 2, 1);
  const std::vector<std::size_t> idx{0};
  const auto w1 = materialize_expert<double>(m.first, idx), w2 = materialize_expert<double>(*m.second, idx);
  oracle::Rng rng(52);
  const auto z = oracle::gaussian(rng, {3, 3});
  auto h = matmul(fold_bias(z), w1);
  for (auto& v : h.data()) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  const auto want = matmul(fold_bias(h), w2);
  EXPECT_LE(oracle::rel_l2(model_forward(m, z, Mode::eval), want), 1e-13);
}

TEST(Block, IdentityHiddenIsProductOfExpertPairs) {
  auto m = make_block(LayerKind::tr, 3, 4, 2, 3, Pointwise::identity);
  // without a second bias the composition is a sum over expert pairs
  auto c2 = m.second->config;
  c2.bias = false;
  m.second = make_layer(c2, 5);
  oracle::Rng rng(53);
  const auto z = oracle::gaussian(rng, {2, 3});
  const auto a = model_coefficients(m, z).levels[0];
  const auto y = model_forward(m, z, Mode::eval);
  Tensor<double> want({2, 2});
  for (std::size_t n1 = 0; n1 < 3; ++n1)
    for (std::size_t n2 = 0; n2 < 3; ++n2) {
      const std::vector<std::size_t> i1{n1}, i2{n2};
      const auto prod = matmul(materialize_expert<double>(m.first, i1), materialize_expert<double>(*m.second, i2));
      const auto part = matmul(fold_bias(z), prod);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t o = 0; o < 2; ++o) want(b, o) += a(b, n1) * a(b, n2) * part(b, o);
    }
  EXPECT_LE(oracle::rel_l2(y, want), 1e-12);
}

TEST(Block, MismatchedLayersAreRejected) {
  auto m = make_block(LayerKind::cp, 3, 4, 2, 3);
  m.validate();
  auto bad = m;
  auto c2 = bad.second->config;
  c2.experts = {2};
  bad.second = make_layer(c2);
  EXPECT_THROW(bad.validate(), ShapeError);
  auto chain = m;
  auto c3 = chain.second->config;
  c3.input_dim = 5;
  chain.second = make_layer(c3);
  EXPECT_THROW(chain.validate(), ShapeError);
}

TEST(Block, GradientsMatchFiniteDifferences) {
  for (LayerKind kind : kKinds) {
    auto m = make_block(kind, 3, 4, 2, 3);
    oracle::Rng rng(54);
    auto z = oracle::gaussian(rng, {3, 3});
    const auto probe = oracle::gaussian(rng, {3, 2});
    auto loss = [&] {
      const auto y = model_forward(m, z, Mode::training);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * probe[i];
      return s;
    };
    ModelCache<double> cache;
    model_forward(m, z, Mode::training, &cache);
    const auto g = model_backward(m, cache, probe);
    auto params = m.parameters();
    for (std::size_t p = 0; p < params.size(); ++p)
      EXPECT_LE(oracle::grad_error(g.params[p], oracle::numeric_gradient(*params[p].tensor, loss), 1e-3), 1e-5)
          << params[p].name;
    EXPECT_LE(oracle::grad_error(g.input, oracle::numeric_gradient(z, loss), 1e-3), 1e-5);
  }
}
