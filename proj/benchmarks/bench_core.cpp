#include <benchmark/benchmark.h>

#include <random>

#include "spi/detector.hpp"
#include "spi/layers.hpp"
#include "spi/pipeline.hpp"
#include "spi/preprocess.hpp"
#include "spi/simulator.hpp"

namespace {

spi::Pattern single_hit(std::uint64_t seed) {
  spi::SimConfig c;
  std::mt19937_64 rng(seed);
  const spi::ParticleScene scene{spi::SceneKind::single, {spi::Particle{35, 0, 0, 1}}};
  return spi::render_pattern(scene, c, rng, 0);
}

void BM_Conv3x3(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  spi::Tensor x(spi::Shape{16, c, n, n});
  for (float& v : x.values()) v = u(rng);
  spi::LayerParams<float> p("conv", 2 * c, c, 3);
  for (float& v : p.weights.values()) v = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(spi::conv2d(x, p, 1, 1));
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_Conv3x3)->Args({3, 128})->Args({8, 64})->Args({32, 8});

void BM_Rasterize(benchmark::State& state) {
  const spi::Pattern p = single_hit(2);
  const spi::RenderSpec spec{spi::Colormap::jet, spi::IntensityScale::logarithmic};
  for (auto _ : state) benchmark::DoNotOptimize(spi::rasterize(p, spec));
}
BENCHMARK(BM_Rasterize)->Unit(benchmark::kMillisecond);

void BM_RenderNetworkInput(benchmark::State& state) {
  const spi::Pattern p = single_hit(3);
  const spi::RenderSpec spec{spi::Colormap::jet, spi::IntensityScale::logarithmic};
  for (auto _ : state) benchmark::DoNotOptimize(spi::render_network_input(p, spec, 128));
}
BENCHMARK(BM_RenderNetworkInput)->Unit(benchmark::kMillisecond);

void BM_SimulateSingle(benchmark::State& state) {
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(single_hit(++seed));
}
BENCHMARK(BM_SimulateSingle)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  std::vector<spi::Example> examples;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (spi::PatternId id = 0; id < 32; ++id) {
    spi::Example e;
    e.id = id;
    e.single = id % 2 == 0;
    if (e.single) e.box = spi::BoxAnnotation{0.5, 0.5, 0.3, 0.3};
    e.image = spi::Tensor(spi::Shape{1, spi::kInputChannels, 128, 128});
    for (float& v : e.image.values()) v = u(rng);
    examples.push_back(std::move(e));
  }
  spi::TrainConfig config;
  config.iterations = 10;
  config.checkpoint_every = 10;
  for (auto _ : state) benchmark::DoNotOptimize(spi::train(config, examples));
  state.SetItemsProcessed(state.iterations() * config.iterations);
  state.SetLabel("10 iterations, batch 16, 128 input");
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
