#include <gtest/gtest.h>

#include <cmath>

#include "mumoe/norm.hpp"
#include "oracles.hpp"

using namespace mumoe;

TEST(Norm, LayerNormConstantRowGivesBeta) {
  auto s = NormState<double>::make(NormKind::layer, 3);
  s.beta = Tensor<double>::vector({0.5, -1.0, 2.0});
  const Tensor<double> x({1, 3}, 4.0);
  const auto y = normalize_forward(s, x, Mode::training);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(y(0, j), s.beta[j]);
}

TEST(Norm, BatchNormTwoRows) {
  auto s = NormState<double>::make(NormKind::batch, 1);
  const auto x = Tensor<double>::matrix({{0.0}, {2.0}});
  const auto y = normalize_forward(s, x, Mode::training);
  const double want = 1.0 / std::sqrt(1.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), -want, 1e-15);
  EXPECT_NEAR(y(1, 0), want, 1e-15);
}

TEST(Norm, BatchNormSingleRowTrainingThrows) {
  auto s = NormState<double>::make(NormKind::batch, 2);
  EXPECT_THROW(normalize_forward(s, Tensor<double>({1, 2}), Mode::training), UsageError);
}

TEST(Norm, EvalIsPure) {
  oracle::Rng rng(31);
  auto s = NormState<double>::make(NormKind::batch, 4);
  s.running_mean = oracle::gaussian(rng, {4});
  const auto before = s.running_mean;
  const auto x = oracle::gaussian(rng, {6, 4});
  const auto a = normalize(s, x, Mode::eval);
  const auto b = normalize(s, x, Mode::eval);
  EXPECT_EQ(a, b);
  EXPECT_EQ(s.running_mean, before);
}

TEST(Norm, TrainingUpdatesRunningStats) {
  auto s = NormState<double>::make(NormKind::batch, 1, 0.1);
  const auto x = Tensor<double>::matrix({{1.0}, {3.0}});
  normalize(s, x, Mode::training);
  EXPECT_NEAR(s.running_mean[0], 0.1 * 2.0, 1e-15);
  // unbiased batch variance is 2
  EXPECT_NEAR(s.running_var[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(Norm, BatchStatisticsOfTrainingOutput) {
  oracle::Rng rng(32);
  auto s = NormState<double>::make(NormKind::batch, 5);
  auto x = oracle::gaussian(rng, {16, 5}, 3.0);
  for (auto& v : x.data()) v += 7.0;
  const auto y = normalize_forward(s, x, Mode::training);
  for (std::size_t j = 0; j < 5; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t b = 0; b < 16; ++b) m += y(b, j) / 16;
    for (std::size_t b = 0; b < 16; ++b) v += (y(b, j) - m) * (y(b, j) - m) / 16;
    EXPECT_LE(std::abs(m), 1e-10);
    EXPECT_NEAR(v, 1.0, 1e-4);
  }
}

TEST(Norm, BackwardMatchesFiniteDifferences) {
  oracle::Rng rng(33);
  for (NormKind kind : {NormKind::batch, NormKind::layer}) {
    auto s = NormState<double>::make(kind, 4);
    s.gamma = oracle::gaussian(rng, {4});
    s.beta = oracle::gaussian(rng, {4});
    auto x = oracle::gaussian(rng, {5, 4});
    const auto probe = oracle::gaussian(rng, {5, 4});
    auto loss = [&] {
      const auto y = normalize_forward(s, x, Mode::training);
      double t = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) t += y[i] * probe[i];
      return t;
    };
    NormCache<double> cache;
    normalize_forward(s, x, Mode::training, &cache);
    const auto g = normalize_backward(s, cache, probe);
    auto check = [](const Tensor<double>& a, const Tensor<double>& n) {
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], n[i], 1e-6);
    };
    check(g.input, oracle::numeric_gradient(x, loss));
    check(g.gamma, oracle::numeric_gradient(s.gamma, loss));
    check(g.beta, oracle::numeric_gradient(s.beta, loss));
  }
}
