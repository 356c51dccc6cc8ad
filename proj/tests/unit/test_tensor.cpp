#include <gtest/gtest.h>

#include <cmath>

#include "mumoe/contract.hpp"
#include "mumoe/decomposition.hpp"
#include "mumoe/svd.hpp"
#include "mumoe/tensor.hpp"
#include "oracles.hpp"

using namespace mumoe;

TEST(Tensor, ShapeAndStrides) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.strides(), (std::vector<std::size_t>{12, 4, 1}));
  t(1, 2, 3) = 5.0;
  EXPECT_EQ(t[23], 5.0);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), ShapeError);
}

TEST(ModeProduct, ScalarCase) {
  Tensor<double> t({1, 1, 1}, 2.0);
  const std::vector<double> v{3.0};
  const auto r = mode_n_vector_product<double>(t, v, 1);
  EXPECT_EQ(r.shape(), (Shape{1, 1}));
  EXPECT_EQ(r[0], 6.0);
}

TEST(ModeProduct, BasisSelectsRow) {
  oracle::Rng rng(1);
  const auto t = oracle::gaussian(rng, {3, 4});
  const std::vector<double> e1{1.0, 0.0, 0.0};
  const auto r = mode_n_vector_product<double>(t, e1, 1);
  ASSERT_EQ(r.shape(), (Shape{4}));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(r[j], t(0, j));
}

TEST(ModeProduct, OnesSumsSlices) {
  oracle::Rng rng(2);
  const auto t = oracle::gaussian(rng, {2, 2, 2});
  const std::vector<double> ones{1.0, 1.0};
  const auto r = mode_n_vector_product<double>(t, ones, 1);
  for (std::size_t j = 0; j < 2; ++j)
    for (std::size_t k = 0; k < 2; ++k) EXPECT_DOUBLE_EQ(r(j, k), t(0, j, k) + t(1, j, k));
}

TEST(ModeProduct, LinearInVector) {
  oracle::Rng rng(3);
  const auto t = oracle::gaussian(rng, {3, 4, 2});
  std::vector<double> u(4), v(4), w(4);
  for (std::size_t i = 0; i < 4; ++i) {
    u[i] = std::sin(double(i));
    v[i] = std::cos(double(i));
    w[i] = 0.7 * u[i] - 1.3 * v[i];
  }
  const auto a = mode_n_vector_product<double>(t, u, 2);
  const auto b = mode_n_vector_product<double>(t, v, 2);
  const auto c = mode_n_vector_product<double>(t, w, 2);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], 0.7 * a[i] - 1.3 * b[i], 1e-12);
}

TEST(ModeProduct, LengthMismatchThrows) {
  Tensor<double> t({2, 3});
  const std::vector<double> v{1.0, 2.0};
  EXPECT_THROW(mode_n_vector_product<double>(t, v, 2), ShapeError);
  EXPECT_THROW(mode_n_vector_product<double>(t, v, 3), ShapeError);
}

TEST(KhatriRao, HandExample) {
  const auto a = Tensor<double>::matrix({{1, 0}, {0, 1}});
  const auto b = Tensor<double>::matrix({{2, 3}, {4, 5}});
  const auto k = khatri_rao(a, b);
  const auto want = Tensor<double>::matrix({{2, 0}, {4, 0}, {0, 3}, {0, 5}});
  EXPECT_EQ(k, want);
}

TEST(KhatriRao, SingleColumnIsKronecker) {
  const auto a = Tensor<double>::matrix({{1}, {2}});
  const auto b = Tensor<double>::matrix({{3}, {4}, {5}});
  const auto k = khatri_rao(a, b);
  EXPECT_EQ(k.values(), (std::vector<double>{3, 4, 5, 6, 8, 10}));
}

TEST(KhatriRao, OnesStacksB) {
  oracle::Rng rng(4);
  const auto b = oracle::gaussian(rng, {3, 2});
  const Tensor<double> ones({4, 2}, 1.0);
  const auto k = khatri_rao(ones, b);
  for (std::size_t blk = 0; blk < 4; ++blk)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t r = 0; r < 2; ++r) EXPECT_EQ(k(blk * 3 + j, r), b(j, r));
  EXPECT_THROW(khatri_rao(ones, Tensor<double>({3, 3})), ShapeError);
}

TEST(CpMaterialize, MatchesOuterProductOracle) {
  oracle::Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t rank = oracle::pick(rng, 1, 3), order = oracle::pick(rng, 1, 4);
    std::vector<Tensor<double>> f;
    Shape shape;
    for (std::size_t k = 0; k < order; ++k) {
      shape.push_back(oracle::pick(rng, 1, 4));
      f.push_back(oracle::gaussian(rng, {rank, shape.back()}));
    }
    EXPECT_EQ(cp_materialize<double>(f, shape), oracle::cp_tensor(f));
  }
}

TEST(CpMaterialize, Mode2MatricizationUsesKhatriRao) {
  oracle::Rng rng(6);
  std::vector<Tensor<double>> f = {oracle::gaussian(rng, {2, 2}), oracle::gaussian(rng, {2, 3}),
                                   oracle::gaussian(rng, {2, 2})};
  const auto w = cp_materialize<double>(f, {2, 3, 2});
  // W_(2) = U2^T (U1^T kr U3^T)^T, rows over mode 2, columns over (n, o).
  const auto kr = khatri_rao(transpose(f[0]), transpose(f[2]));
  const auto m = matmul(transpose(f[1]), transpose(kr));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t o = 0; o < 2; ++o) EXPECT_NEAR(w(n, i, o), m(i, n * 2 + o), 1e-14);
}

TEST(CpMaterialize, RankMismatchThrows) {
  std::vector<Tensor<double>> f = {Tensor<double>({2, 2}), Tensor<double>({3, 2})};
  EXPECT_THROW(cp_materialize<double>(f, {2, 2}), ShapeError);
  std::vector<Tensor<double>> g = {Tensor<double>({2, 2}), Tensor<double>({2, 2})};
  EXPECT_THROW(cp_materialize<double>(g, {2, 3}), ShapeError);
}

TEST(TrMaterialize, MatchesTraceOracle) {
  oracle::Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t order = oracle::pick(rng, 1, 4);
    std::vector<std::size_t> ranks;
    for (std::size_t k = 0; k < order; ++k) ranks.push_back(oracle::pick(rng, 1, 3));
    std::vector<Tensor<double>> cores;
    for (std::size_t k = 0; k < order; ++k)
      cores.push_back(oracle::gaussian(rng, {ranks[k], oracle::pick(rng, 1, 4), ranks[(k + 1) % order]}));
    const auto got = tr_materialize<double>(cores);
    const auto want = oracle::tr_tensor(cores);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(TrMaterialize, UnitRanksGiveOuterProduct) {
  std::vector<Tensor<double>> cores = {Tensor<double>({1, 2, 1}, std::vector<double>{1, 2}),
                                       Tensor<double>({1, 2, 1}, std::vector<double>{3, 4}),
                                       Tensor<double>({1, 1, 1}, std::vector<double>{5})};
  const auto w = tr_materialize<double>(cores);
  EXPECT_EQ(w.values(), (std::vector<double>{15, 20, 30, 40}));
}

TEST(TrMaterialize, BrokenRingThrows) {
  std::vector<Tensor<double>> cores = {Tensor<double>({2, 2, 3}), Tensor<double>({3, 2, 1})};
  EXPECT_THROW(tr_materialize<double>(cores), ShapeError);
}

TEST(TrMaterialize, UnitBoundaryRankIsTensorTrain) {
  oracle::Rng rng(8);
  std::vector<Tensor<double>> cores = {oracle::gaussian(rng, {1, 3, 2}), oracle::gaussian(rng, {2, 2, 2}),
                                       oracle::gaussian(rng, {2, 2, 1})};
  const auto w = tr_materialize<double>(cores);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) {
        double s = 0.0;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) s += cores[0](0, i, a) * cores[1](a, j, b) * cores[2](b, k, 0);
        EXPECT_NEAR(w(i, j, k), s, 1e-14);
      }
}

TEST(Svd, DiagonalAndIdentity) {
  const auto d = Tensor<double>::matrix({{3, 0}, {0, -2}});
  const auto s = singular_values(d);
  EXPECT_NEAR(s[0], 3.0, 1e-14);
  EXPECT_NEAR(s[1], 2.0, 1e-14);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  for (double v : singular_values(eye)) EXPECT_NEAR(v, 1.0, 1e-14);
}

TEST(Svd, TwoByTwoMatchesGramEigenvalues) {
  oracle::Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = oracle::gaussian(rng, {2, 2});
    const double a = m(0, 0) * m(0, 0) + m(1, 0) * m(1, 0);
    const double b = m(0, 0) * m(0, 1) + m(1, 0) * m(1, 1);
    const double c = m(0, 1) * m(0, 1) + m(1, 1) * m(1, 1);
    const double tr = a + c, det = a * c - b * b;
    const double disc = std::sqrt(tr * tr / 4 - det);
    const auto s = singular_values(m);
    EXPECT_NEAR(s[0], std::sqrt(tr / 2 + disc), 1e-12);
    EXPECT_NEAR(s[1], std::sqrt(std::max(0.0, tr / 2 - disc)), 1e-10);
  }
}

TEST(Svd, TruncationErrorAndRank) {
  oracle::Rng rng(10);
  const auto m = oracle::gaussian(rng, {6, 4});
  const auto s = singular_values(m);
  double prev = 1e300;
  for (std::size_t k = 0; k <= 4; ++k) {
    const auto t = truncate(m, k);
    double tail = 0.0;
    for (std::size_t i = k; i < s.size(); ++i) tail += s[i] * s[i];
    Tensor<double> diff = m;
    for (std::size_t i = 0; i < diff.size(); ++i) diff[i] -= t[i];
    const double err = frobenius_norm(diff);
    EXPECT_NEAR(err, std::sqrt(tail), 1e-8);
    EXPECT_LE(err, prev + 1e-12);
    EXPECT_LE(numerical_rank(t), k);
    prev = err;
  }
  EXPECT_LT(relative_error(truncate(m, 4), m), 1e-8);
}

TEST(Contract, MatrixVectorAndInnerProduct) {
  oracle::Rng rng(11);
  const auto a = oracle::gaussian(rng, {3, 4});
  const auto x = oracle::gaussian(rng, {4});
  const auto y = contract<double>("ij,j->i", {&a, &x});
  for (std::size_t i = 0; i < 3; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += a(i, j) * x[j];
    EXPECT_NEAR(y[i], s, 1e-14);
  }
  const auto b = oracle::gaussian(rng, {3, 4});
  const auto ip = contract<double>("ij,ij->", {&a, &b});
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  EXPECT_EQ(ip.shape(), (Shape{1}));
  EXPECT_NEAR(ip[0], s, 1e-14);
}

TEST(Contract, ThreeOperandLayer) {
  oracle::Rng rng(12);
  const auto w = oracle::gaussian(rng, {2, 3, 2});
  const auto a = oracle::gaussian(rng, {2});
  const auto z = oracle::gaussian(rng, {3});
  const auto y = contract<double>("nio,n,i->o", {&w, &a, &z});
  for (std::size_t o = 0; o < 2; ++o) {
    double s = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 3; ++i) s += w(n, i, o) * a[n] * z[i];
    EXPECT_NEAR(y[o], s, 1e-14);
  }
}

TEST(Contract, Errors) {
  const Tensor<double> a({2, 3}), b({4});
  EXPECT_THROW(contract<double>("ij,j->i", {&a, &b}), ShapeError);
  EXPECT_THROW(contract<double>("ij->ii", {&a}), ShapeError);
}
