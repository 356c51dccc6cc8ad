#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "mumoe/analysis.hpp"
#include "mumoe/init.hpp"
#include "mumoe/svd.hpp"
#include "oracles.hpp"

using namespace mumoe;

namespace {

Model<double> random_model(std::uint64_t seed, std::size_t in, std::size_t out, std::size_t experts,
                           LayerKind kind = LayerKind::cp) {
  LayerConfig c;
  c.kind = kind;
  c.input_dim = in;
  c.output_dim = out;
  c.experts = {experts};
  c.bias = true;
  c.cp_rank = 3;
  c.tr_ranks = {2, 2, 3};
  InitConfig init;
  init.seed = seed;
  init.sigma = {1.0};
  Model<double> m;
  m.first = init_layer<double>(c, init);
  return m;
}

// Three experts on three inputs with hard routing: input e_k goes to expert
// k, which votes for class k.
Model<double> routing_toy() {
  LayerConfig c;
  c.kind = LayerKind::dense;
  c.input_dim = 3;
  c.output_dim = 3;
  c.experts = {3};
  Model<double> m;
  m.first = init_layer<double>(c, InitConfig{});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t n = 0; n < 3; ++n) m.first.gates[0].weight(i, n) = i == n ? 10.0 : 0.0;
  Tensor<double> w({3, 3, 3});
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 3; ++i) w(k, i, k) = 1.0;
  m.first.weights = DenseWeights<double>{w};
  return m;
}

Dataset toy_data() {
  Dataset d;
  d.inputs = Tensor<double>::matrix({{1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 1}});
  d.labels = {0, 0, 1, 1, 2, 2};
  d.test.assign(6, 1);
  d.classes = 3;
  return d;
}

}  // namespace

TEST(Ablate, ZeroCoefficientInputIsUnchanged) {
  const auto m = random_model(71, 4, 3, 5);
  oracle::Rng rng(71);
  const auto z = oracle::gaussian(rng, {3, 4});
  auto a = model_coefficients(m, z);
  for (std::size_t b = 0; b < 3; ++b) {
    a.levels[0](b, 2) = 0.0;
    double s = 0.0;
    for (std::size_t n = 0; n < 5; ++n) s += a.levels[0](b, n);
    for (std::size_t n = 0; n < 5; ++n) a.levels[0](b, n) /= s;
  }
  const auto ablated = ablate_expert(m, 2);
  EXPECT_LE(oracle::rel_l2(model_forward_with_coefficients(ablated, a, z), model_forward_with_coefficients(m, a, z)),
            1e-14);
}

TEST(Ablate, AllExpertsGiveZeroOutput) {
  for (LayerKind kind : {LayerKind::dense, LayerKind::cp, LayerKind::tr}) {
    auto m = random_model(72, 4, 3, 4, kind);
    for (std::size_t n = 0; n < 4; ++n) m = ablate_expert(m, n);
    oracle::Rng rng(72);
    const auto y = model_forward(m, oracle::gaussian(rng, {2, 4}), Mode::eval);
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Ablate, BadIndexThrows) {
  const auto m = random_model(73, 4, 3, 4);
  EXPECT_THROW(ablate_expert(m, 4), UsageError);
  EXPECT_THROW(ablate_expert_slice(m, 1, 0), UsageError);
}

TEST(DifferenceVector, ToyRecount) {
  const auto m = routing_toy();
  const auto data = toy_data();
  const auto base = evaluate_per_class(m, data);
  EXPECT_EQ(base.accuracy, (std::vector<double>{1, 1, 1}));
  const auto d = class_accuracy_diff(m, data, 1);
  // class 1 rows now score all zeros and fall to class 0
  EXPECT_EQ(d.d, (std::vector<double>{0, 1, 0}));
  EXPECT_TRUE(d.nonzero());
  EXPECT_EQ(polysemanticity_score(d).p, 0.0);
  EXPECT_EQ(polysemanticity_score(d).argmax, 1u);
}

TEST(DifferenceVector, UnchangedPredictionsGiveZero) {
  const std::vector<int> labels{0, 1, 1, 2}, pred{0, 1, 0, 2};
  const auto acc = class_accuracy(pred, labels, 3);
  const auto d = class_accuracy_diff(acc, acc);
  EXPECT_FALSE(d.nonzero());
  for (double v : d.d) EXPECT_EQ(v, 0.0);
}

TEST(DifferenceVector, ZeroBaselineIsUndefined) {
  const std::vector<int> labels{0, 1, 1, 3};
  const auto base = class_accuracy(std::vector<int>{0, 0, 1, 0}, labels, 4);
  const auto abl = class_accuracy(std::vector<int>{2, 0, 0, 0}, labels, 4);
  const auto d = class_accuracy_diff(base, abl);
  EXPECT_EQ(d.defined, (std::vector<std::uint8_t>{1, 1, 0, 0}));
  EXPECT_EQ(d.d[0], 1.0);
  EXPECT_EQ(d.d[1], 1.0);
  EXPECT_EQ(d.d[3], 0.0);
}

TEST(Polysemanticity, HandValues) {
  EXPECT_EQ(polysemanticity_score(std::vector<double>{1, 1, 0}), 1.0);
  EXPECT_EQ(polysemanticity_score(std::vector<double>{0.5, 0, 0}), 0.5);
  EXPECT_EQ(polysemanticity_score(std::vector<double>{0, 0, 1, 0}), 0.0);
  EXPECT_NEAR(polysemanticity_score(std::vector<double>{0.2, -0.3, 0.9}), std::sqrt(0.04 + 0.09 + 0.01), 1e-15);
}

TEST(Polysemanticity, UndefinedClassesAreSkipped) {
  DifferenceVector d;
  d.d = {0.0, 1.0, 0.0};
  d.defined = {1, 1, 0};
  EXPECT_EQ(polysemanticity_score(d).p, 0.0);
}

TEST(ExpertLoad, UniformAndOneHot) {
  Tensor<double> uniform({4, 3}, 1.0 / 3);
  const auto u = expert_load(uniform);
  EXPECT_EQ(u.counts, (std::vector<std::size_t>{0, 0, 0}));
  EXPECT_EQ(u.dead.size(), 3u);
  const auto one = Tensor<double>::matrix({{1, 0, 0}, {0, 0, 1}, {0, 0, 1}, {1, 0, 0}});
  const auto o = expert_load(one);
  EXPECT_EQ(o.counts, (std::vector<std::size_t>{2, 0, 2}));
  EXPECT_EQ(o.dead, (std::vector<std::size_t>{1}));
}

TEST(ExpertLoad, ModelMatchesScan) {
  const auto m = random_model(74, 4, 3, 5);
  oracle::Rng rng(74);
  const auto z = oracle::gaussian(rng, {40, 4}, 3.0);
  const auto a = model_coefficients(m, z).levels[0];
  std::vector<std::size_t> want(5);
  for (std::size_t b = 0; b < 40; ++b)
    for (std::size_t n = 0; n < 5; ++n) want[n] += a(b, n) >= 0.3;
  EXPECT_EQ(expert_load(m, z, 0.3).counts, want);
}

TEST(MeanSubpop, Means) {
  const auto m = routing_toy();
  const auto z = toy_data().inputs;
  const auto a = model_coefficients(m, z).levels[0];
  const std::size_t one[] = {3};
  const auto single = mean_subpop_coefficients(m, z, one);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_EQ(single[n], a(3, n));
  const std::size_t same[] = {0, 1};
  const auto s = mean_subpop_coefficients(m, z, same);
  for (std::size_t n = 0; n < 3; ++n) EXPECT_DOUBLE_EQ(s[n], a(0, n));
  const std::size_t pair[] = {0, 2};
  const auto mid = mean_subpop_coefficients(m, z, pair);
  EXPECT_EQ(mid, (std::vector<double>{0.5, 0.5, 0.0}));
  EXPECT_THROW(mean_subpop_coefficients(m, z, std::span<const std::size_t>{}), UsageError);
}

TEST(Rewrite, LogitArithmetic) {
  RewriteTerm t{0, {0.0, 1.0, 0.0}, 0.0};
  const std::vector<double> e1{0, 1, 0}, e0{1, 0, 0};
  EXPECT_EQ(rewrite_logit(2.5, t, e1), 2.5);
  t.lambda = 3.0;
  EXPECT_EQ(rewrite_logit(2.5, t, e0), 2.5);
  EXPECT_EQ(rewrite_logit(2.5, t, e1), 5.5);
}

TEST(Rewrite, OnlyTargetHeadChanges) {
  const auto m = random_model(75, 4, 3, 5);
  oracle::Rng rng(75);
  const auto z = oracle::gaussian(rng, {6, 4});
  RewriteTerm t{1, std::vector<double>(5, 0.2), -5.0};
  const auto base = model_forward(m, z, Mode::eval);
  const auto out = rewrite_logits(m, t, z);
  const auto a = model_coefficients(m, z).levels[0];
  for (std::size_t b = 0; b < 6; ++b) {
    EXPECT_EQ(out(b, 0), base(b, 0));
    EXPECT_EQ(out(b, 2), base(b, 2));
    double dot = 0.0;
    for (std::size_t n = 0; n < 5; ++n) dot += 0.2 * a(b, n);
    EXPECT_NEAR(out(b, 1), base(b, 1) - 5.0 * dot, 1e-14);
  }
  t.head = 3;
  EXPECT_THROW(rewrite_logits(m, t, z), UsageError);
}

TEST(SvdAblate, Fractions) {
  oracle::Rng rng(76);
  const auto w = oracle::gaussian(rng, {6, 4});
  EXPECT_LE(relative_error(svd_ablate(w, 1.0), w), 1e-8);
  const auto zero = svd_ablate(w, 0.0);
  for (double v : zero.data()) EXPECT_EQ(v, 0.0);
  Tensor<double> r1({5, 3});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 3; ++j) r1(i, j) = (i + 1.0) * (j - 1.5);
  EXPECT_LE(relative_error(svd_ablate(r1, 0.1), r1), 1e-12);
}

TEST(SvdAblate, ErrorIsDiscardedSpectrum) {
  oracle::Rng rng(77);
  const auto w = oracle::gaussian(rng, {7, 5});
  const auto s = singular_values(w);
  double prev = std::numeric_limits<double>::infinity();
  for (double f : {0.0, 0.2, 0.4, 0.5, 0.8, 1.0}) {
    const auto t = svd_ablate(w, f);
    Tensor<double> diff = w;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= t[i];
    const auto k = std::size_t(std::ceil(f * 5 - 1e-12));
    double tail = 0.0;
    for (std::size_t i = k; i < s.size(); ++i) tail += s[i] * s[i];
    const double err = frobenius_norm(diff);
    EXPECT_NEAR(err, std::sqrt(tail), 1e-8) << f;
    EXPECT_LE(err, prev + 1e-12);
    prev = err;
  }
}

TEST(SvdAblate, ModelKeepsGating) {
  const auto m = random_model(78, 4, 3, 3, LayerKind::tr);
  const auto full = svd_ablate_model(m, 1.0);
  EXPECT_EQ(full.first.config.kind, LayerKind::dense);
  oracle::Rng rng(78);
  const auto z = oracle::gaussian(rng, {5, 4});
  EXPECT_LE(oracle::rel_l2(model_forward(full, z, Mode::eval), model_forward(m, z, Mode::eval)), 1e-10);
  EXPECT_EQ(full.first.gates[0].weight, m.first.gates[0].weight);
}

TEST(Report, TsvRows) {
  const auto m = routing_toy();
  auto data = toy_data();
  const auto report = polysemanticity_report(m, data);
  ASSERT_EQ(report.rows.size(), 3u);
  // ablating expert 0 leaves all-zero logits, which still tie-break to class 0
  EXPECT_EQ(report.counted, 2u);
  EXPECT_FALSE(report.rows[0].affects_accuracy);
  EXPECT_DOUBLE_EQ(report.mean_p, 0.0);
  std::ostringstream out;
  write_report_tsv(out, report);
  std::size_t lines = 0;
  for (char ch : out.str()) lines += ch == '\n';
  EXPECT_GE(lines, 3u);
}
