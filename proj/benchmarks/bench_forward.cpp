#include <benchmark/benchmark.h>

#include <random>

#include "mumoe/decomposition.hpp"
#include "mumoe/init.hpp"
#include "mumoe/moe_layer.hpp"

using namespace mumoe;

namespace {

LayerConfig config(LayerKind kind, std::size_t dim, std::size_t experts) {
  LayerConfig c;
  c.kind = kind;
  c.input_dim = dim;
  c.output_dim = dim;
  c.experts = {experts};
  c.bias = true;
  c.cp_rank = dim / 2;
  c.tr_ranks = {4, 4, dim / 2};
  return c;
}

Tensor<float> inputs(std::size_t batch, std::size_t dim) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n;
  Tensor<float> z({batch, dim});
  for (auto& v : z.data()) v = n(rng);
  return z;
}

void forward_layer(benchmark::State& state, LayerKind kind) {
  const auto dim = std::size_t(state.range(0)), experts = std::size_t(state.range(1));
  const auto layer = init_layer<float>(config(kind, dim, experts), InitConfig{});
  const auto z = inputs(64, dim);
  for (auto _ : state) benchmark::DoNotOptimize(forward(layer, z, Mode::eval));
  state.SetItemsProcessed(state.iterations() * 64);
}

void backward_layer(benchmark::State& state, LayerKind kind) {
  const auto dim = std::size_t(state.range(0)), experts = std::size_t(state.range(1));
  const auto layer = init_layer<float>(config(kind, dim, experts), InitConfig{});
  const auto z = inputs(64, dim);
  ForwardCache<float> cache;
  const auto y = forward(layer, z, Mode::training, &cache);
  for (auto _ : state) benchmark::DoNotOptimize(backward(layer, cache, y));
}

void materialize(benchmark::State& state) {
  const auto dim = std::size_t(state.range(0)), experts = std::size_t(state.range(1));
  const auto layer = init_layer<float>(config(LayerKind::cp, dim, experts), InitConfig{});
  for (auto _ : state) benchmark::DoNotOptimize(materialize_weights(layer));
}

}  // namespace

BENCHMARK_CAPTURE(forward_layer, cp, LayerKind::cp)->Args({64, 16})->Args({128, 64})->Args({256, 128});
BENCHMARK_CAPTURE(forward_layer, tr, LayerKind::tr)->Args({64, 16})->Args({128, 64})->Args({256, 128});
BENCHMARK_CAPTURE(forward_layer, dense, LayerKind::dense)->Args({64, 16})->Args({128, 64});
BENCHMARK_CAPTURE(backward_layer, cp, LayerKind::cp)->Args({128, 64});
BENCHMARK_CAPTURE(backward_layer, tr, LayerKind::tr)->Args({128, 64});
BENCHMARK(materialize)->Args({64, 16})->Args({128, 64});

BENCHMARK_MAIN();
