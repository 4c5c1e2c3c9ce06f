#include <benchmark/benchmark.h>

#include <torch/torch.h>

#include "stainforge/backbone.hpp"
#include "stainforge/data_pipeline.hpp"
#include "stainforge/discriminator.hpp"
#include "stainforge/generator.hpp"
#include "stainforge/trainer.hpp"

using namespace stainforge;

namespace {

const PerceptualBackbone& backbone() {
  static const auto b = PerceptualBackbone::random(vgg19_plan(), 0);
  return b;
}

std::vector<std::string> all_loss_layers() {
  auto layers = kStyleLayers;
  layers.push_back(kContentLayer);
  return layers;
}

}  // namespace

static void BM_BackboneForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  auto x = torch::rand({state.range(0), 3, state.range(1), state.range(1)});
  const auto layers = all_loss_layers();
  for (auto _ : state) benchmark::DoNotOptimize(backbone().extract(x, layers).size());
}
BENCHMARK(BM_BackboneForward)->Args({1, 256})->Args({4, 256})->Unit(benchmark::kMillisecond);

// Forward plus the input-gradient backward pass the generator loss needs.
static void BM_BackboneInputGradient(benchmark::State& state) {
  const auto layers = all_loss_layers();
  for (auto _ : state) {
    auto x = torch::rand({state.range(0), 3, state.range(1), state.range(1)}).requires_grad_(true);
    auto feats = backbone().extract(x, layers);
    torch::Tensor sum = torch::zeros({});
    for (auto& [name, f] : feats) sum = sum + f.values.square().mean();
    sum.backward();
    benchmark::DoNotOptimize(x.grad().data_ptr());
  }
}
BENCHMARK(BM_BackboneInputGradient)->Args({4, 256})->Unit(benchmark::kMillisecond);

static void BM_GeneratorForwardBackward(benchmark::State& state) {
  GeneratorConfig config;
  if (state.range(2) == 1) config = GeneratorConfig::resnet_transform();
  StainGenerator gen(config, 0);
  auto x = torch::rand({state.range(0), 3, state.range(1), state.range(1)});
  for (auto _ : state) {
    auto t = gen.forward(x, ForwardMode::Training).transformed;
    t.square().mean().backward();
    benchmark::DoNotOptimize(t.data_ptr());
  }
}
BENCHMARK(BM_GeneratorForwardBackward)
    ->Args({4, 256, 0})
    ->Args({4, 256, 1})
    ->ArgNames({"batch", "size", "resnet"})
    ->Unit(benchmark::kMillisecond);

static void BM_GeneratorInference(benchmark::State& state) {
  StainGenerator gen(GeneratorConfig{}, 0);
  auto x = torch::rand({3, state.range(0), state.range(0)});
  for (auto _ : state) benchmark::DoNotOptimize(gen.forward(x, ForwardMode::Inference).transformed.data_ptr());
}
BENCHMARK(BM_GeneratorInference)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

static void BM_DiscriminatorScore(benchmark::State& state) {
  PatchDiscriminator disc(0);
  auto x = torch::rand({4, 3, state.range(0), state.range(0)});
  for (auto _ : state) {
    torch::NoGradGuard no_grad;
    benchmark::DoNotOptimize(disc.score(x).scores.data_ptr());
  }
}
BENCHMARK(BM_DiscriminatorScore)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  TrainConfig config;
  config.ablation = static_cast<Ablation>(state.range(0));
  auto train_state = init_train_state(config);
  torch::manual_seed(1);
  Batch batch{{0, 1, 2, 3}, torch::rand({4, 3, 256, 256}), torch::rand({4, 3, 256, 256})};
  const auto targets = compute_targets(backbone(), batch.inputs, batch.references, config.weights);
  for (auto _ : state) benchmark::DoNotOptimize(train_step(train_state, backbone(), batch, targets).total);
}
BENCHMARK(BM_TrainStep)
    ->Arg(static_cast<int>(Ablation::NST_AD_HRNET))
    ->Arg(static_cast<int>(Ablation::NST))
    ->Unit(benchmark::kMillisecond)
    ->Iterations(3);
