#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "stainforge/backbone.hpp"
#include "stainforge/losses.hpp"
#include "stainforge/reinhard.hpp"

using namespace stainforge;

static void BM_Gram(benchmark::State& state) {
  torch::manual_seed(0);
  const auto n = state.range(0), m = state.range(1);
  auto f = torch::rand({n, m});
  for (auto _ : state) {
    auto g = gram(f);
    benchmark::DoNotOptimize(g.values.data_ptr<float>());
  }
  state.SetItemsProcessed(state.iterations() * n * n * m);
}
BENCHMARK(BM_Gram)->Args({64, 256 * 256})->Args({128, 128 * 128})->Args({512, 32 * 32});

static void BM_StyleLayerLoss(benchmark::State& state) {
  torch::manual_seed(0);
  const auto n = state.range(0);
  GramMatrix a{torch::rand({n, n}), "conv1_1", n, 1024};
  GramMatrix b{torch::rand({n, n}), "conv1_1", n, 1024};
  for (auto _ : state) benchmark::DoNotOptimize(style_layer_loss(a, b).item<double>());
}
BENCHMARK(BM_StyleLayerLoss)->Arg(64)->Arg(512);

static void BM_Reinhard(benchmark::State& state) {
  torch::manual_seed(0);
  const auto size = state.range(0);
  auto img = torch::rand({3, size, size});
  const auto target = lab_stats(torch::rand({3, size, size}));
  for (auto _ : state) {
    auto out = reinhard_transfer_lab(img, target);
    benchmark::DoNotOptimize(out.data_ptr());
  }
}
BENCHMARK(BM_Reinhard)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
