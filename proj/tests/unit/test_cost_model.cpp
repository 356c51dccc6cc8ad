#include <gtest/gtest.h>

#include "mumoe/cost_model.hpp"
#include "mumoe/init.hpp"
#include "oracles.hpp"

using namespace mumoe;

namespace {

LayerConfig table_config(LayerKind kind) {
  LayerConfig c;
  c.kind = kind;
  c.input_dim = 768;
  c.output_dim = 1000;
  c.experts = {128};
  c.bias = true;
  c.cp_rank = 512;
  if (kind == LayerKind::tr) c.tr_ranks = {4, 4, 512};
  return c;
}

}  // namespace

TEST(ParamCount, TableValues) {
  EXPECT_EQ(param_count(table_config(LayerKind::cp)).total(), 1069568u);
  EXPECT_EQ(param_count(table_config(LayerKind::tr)).total(), 3723264u);
  const auto dense = param_count(table_config(LayerKind::dense));
  EXPECT_EQ(dense.weights, 98432000u);
  EXPECT_EQ(dense.gating, 768u * 128u);
}

TEST(ParamCount, NormAndUngated) {
  auto c = table_config(LayerKind::cp);
  c.gate_norm = NormKind::layer;
  EXPECT_EQ(param_count(c).norm, 2u * 128u);
  c.gated = false;
  EXPECT_EQ(param_count(c).gating, 0u);
  EXPECT_EQ(param_count(c).norm, 0u);
}

TEST(ParamCount, EqualsStoredScalars) {
  oracle::Rng rng(61);
  for (LayerKind kind : {LayerKind::dense, LayerKind::cp, LayerKind::tr})
    for (int rep = 0; rep < 30; ++rep) {
      auto c = oracle::random_config(rng, kind, 7);
      c.gate_norm = rep % 3 == 0 ? NormKind::batch : rep % 3 == 1 ? NormKind::layer : NormKind::none;
      InitConfig init;
      init.seed = rng();
      const auto layer = init_layer<double>(c, init);
      EXPECT_EQ(layer.parameter_count(), param_count(c).total()) << to_string(kind);
    }
}

TEST(FlopEstimate, SmallExamples) {
  LayerConfig cp;
  cp.kind = LayerKind::cp;
  cp.input_dim = 4;
  cp.output_dim = 5;
  cp.experts = {3};
  cp.cp_rank = 2;
  EXPECT_EQ(flop_estimate(cp), 24u);
  LayerConfig dense;
  dense.kind = LayerKind::dense;
  dense.input_dim = 3;
  dense.output_dim = 4;
  dense.experts = {2};
  EXPECT_EQ(flop_estimate(dense), 24u);
  EXPECT_EQ(naive_flop_estimate(dense), 24u);
}

TEST(FlopEstimate, TrTableConfig) {
  LayerConfig c;
  c.kind = LayerKind::tr;
  c.input_dim = 768;
  c.output_dim = 768;
  c.experts = {512};
  c.tr_ranks = {4, 4, 512};
  EXPECT_EQ(flop_estimate(c), 3162112u);
  EXPECT_GT(naive_flop_estimate(c) / flop_estimate(c), 10000u);
}

TEST(RankBound, Examples) {
  LayerConfig cp;
  cp.kind = LayerKind::cp;
  cp.input_dim = 768;
  cp.output_dim = 768;
  cp.experts = {8};
  cp.cp_rank = 512;
  EXPECT_EQ(rank_bound(cp), 512u);
  cp.cp_rank = 2000;
  EXPECT_EQ(rank_bound(cp), 768u);
  auto tr = cp;
  tr.kind = LayerKind::tr;
  tr.tr_ranks = {4, 4, 512};
  EXPECT_EQ(rank_bound(tr), 768u);
  tr.tr_ranks = {2, 3, 5};
  EXPECT_EQ(rank_bound(tr), 10u);
  auto dense = cp;
  dense.kind = LayerKind::dense;
  dense.output_dim = 10;
  EXPECT_EQ(rank_bound(dense), 10u);
}
