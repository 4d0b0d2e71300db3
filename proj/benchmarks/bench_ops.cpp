#include <benchmark/benchmark.h>

#include "a2snas/a2sconv.hpp"
#include "a2snas/ops.hpp"
#include "a2snas/rng.hpp"
#include "a2snas/supernet.hpp"

using namespace a2snas;

namespace {

Tensor<float> randn(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<float> t(shape);
  for (auto& v : t.mutable_values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

A2SConvBlock<float> random_block(std::int64_t c, Rng& rng) {
  A2SConvBlock<float> block;
  block.channels = c;
  for (InnerOp op : kInnerOps) {
    const std::int64_t k = kernel_size(op);
    auto& cand = block.candidates[static_cast<std::size_t>(op)];
    cand.weight = randn(Shape{c, c, k, k, k}, rng, 0.1);
    cand.bias = Tensor<float>(Shape{c});
    cand.gamma = Tensor<float>::full(Shape{c}, 1.0f);
    cand.beta = Tensor<float>(Shape{c});
  }
  block.logits = {Tensor<float>(Shape{3}), Tensor<float>(Shape{4})};
  return block;
}

// args: channels, spatial extent, kernel
void BM_Conv3dForward(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1), k = state.range(2);
  Rng rng(1);
  const auto x = randn(Shape{8, c, 16, s, s}, rng);
  const auto w = randn(Shape{c, c, k, k, k}, rng, 0.1);
  const auto b = randn(Shape{c}, rng);
  const ops::Conv3dGeometry geom{{1, 1, 1}, {1, 1, 1}, {k / 2, k / 2, k / 2}};
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv3d<float>(nullptr, x, w, b, geom));
  state.SetItemsProcessed(state.iterations() * 8 * c * c * k * k * k * 16 * s * s);
}
BENCHMARK(BM_Conv3dForward)->Args({4, 7, 3})->Args({16, 7, 3})->Args({16, 19, 3})->Args({16, 10, 5})->Unit(benchmark::kMillisecond);

void BM_Conv3dForwardBackward(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1);
  Rng rng(2);
  const auto x = randn(Shape{8, c, 16, s, s}, rng);
  const auto w = randn(Shape{c, c, 3, 3, 3}, rng, 0.1);
  const auto b = randn(Shape{c}, rng);
  const ops::Conv3dGeometry geom{{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};
  for (auto _ : state) {
    Tape<float> tape;
    const auto xl = tape.leaf(x, "x");
    const auto wl = tape.leaf(w, "w");
    const auto bl = tape.leaf(b, "b");
    benchmark::DoNotOptimize(tape.backward(ops::sum(&tape, ops::conv3d(&tape, xl, wl, bl, geom))));
  }
}
BENCHMARK(BM_Conv3dForwardBackward)->Args({4, 7})->Args({16, 19})->Unit(benchmark::kMillisecond);

void BM_MixedForward(benchmark::State& state) {
  const auto c = state.range(0), s = state.range(1);
  Rng rng(3);
  const auto block = random_block(c, rng);
  const auto x = randn(Shape{8, c, 16, s, s}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mixed_forward<float>(nullptr, block, x, ops::NormMode::kBatchStats));
}
BENCHMARK(BM_MixedForward)->Args({4, 7})->Args({16, 19})->Unit(benchmark::kMillisecond);

void BM_SupernetTrainStep(benchmark::State& state) {
  const SupernetConfig cfg{state.range(0), state.range(1), 32, 5};
  auto net = build_supernet(cfg, 4);
  Rng rng(5);
  const auto x = randn(Shape{16, 1, 32, cfg.patch_size, cfg.patch_size}, rng);
  const std::vector<std::int32_t> labels(16, 1);
  for (auto _ : state) {
    Tape<float> tape;
    const auto logits = net.forward(&tape, Track::kAll, x);
    benchmark::DoNotOptimize(tape.backward(ops::cross_entropy(&tape, logits, labels)));
  }
}
BENCHMARK(BM_SupernetTrainStep)->Args({4, 7})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
