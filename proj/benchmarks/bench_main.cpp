#include <benchmark/benchmark.h>

#include "vaeseg/inference.hpp"
#include "vaeseg/metrics.hpp"
#include "vaeseg/ops.hpp"
#include "vaeseg/trainer.hpp"

using namespace vaeseg;

namespace {

Tensor noise(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

ModelConfig desk_config() {
  ModelConfig c;
  c.base_filters = 8;
  c.crop_shape = {32, 32, 32};
  return c;
}

}  // namespace

static void BM_Conv3dForward(benchmark::State& state) {
  const std::int64_t ch = state.range(0), n = state.range(1);
  const ConvSpec spec{ch, ch, 3, 1};
  const Tensor x = noise({ch, n, n, n}, 1), w = noise(spec.weight_shape(), 2), b = noise({ch}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv3d_forward(x, w, &b, spec));
  state.SetItemsProcessed(state.iterations() * ch * ch * 27 * n * n * n);
}
BENCHMARK(BM_Conv3dForward)->Args({8, 32})->Args({16, 16})->Args({32, 8})->Unit(benchmark::kMillisecond);

static void BM_Conv3dBackward(benchmark::State& state) {
  const std::int64_t ch = state.range(0), n = state.range(1);
  const ConvSpec spec{ch, ch, 3, 1};
  const Tensor x = noise({ch, n, n, n}, 1), w = noise(spec.weight_shape(), 2), go = noise({ch, n, n, n}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::conv3d_backward(go, x, w, spec, true, true, true));
}
BENCHMARK(BM_Conv3dBackward)->Args({8, 32})->Args({32, 8})->Unit(benchmark::kMillisecond);

static void BM_GroupNorm(benchmark::State& state) {
  const std::int64_t ch = state.range(0), n = state.range(1);
  const Tensor x = noise({ch, n, n, n}, 4);
  for (auto _ : state) {
    Graph g;
    Var y = ops::group_norm(make_leaf(g, x, false), make_leaf(g, Tensor({ch}, 1.0f), false),
                            make_leaf(g, Tensor::zeros({ch}), false), {ch, std::min<std::int64_t>(ch, 8), 1e-5f});
    benchmark::DoNotOptimize(y.value().raw());
  }
}
BENCHMARK(BM_GroupNorm)->Args({8, 32})->Args({32, 16})->Unit(benchmark::kMicrosecond);

static void BM_Upsample(benchmark::State& state) {
  const Tensor x = noise({16, 16, 16, 16}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::upsample2x(x));
}
BENCHMARK(BM_Upsample)->Unit(benchmark::kMicrosecond);

static void BM_Predict(benchmark::State& state) {
  const Model m = build_model(desk_config(), 1);
  const Volume v{noise({4, 32, 32, 32}, 6)};
  for (auto _ : state) benchmark::DoNotOptimize(predict(m, v));
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

static void BM_TrainStep(benchmark::State& state) {
  const Model m = build_model(desk_config(), 1);
  const Volume v{noise({4, 32, 32, 32}, 7)};
  Tensor target = noise({3, 32, 32, 32}, 8);
  for (auto& t : target.data()) t = t > 0.0f ? 1.0f : 0.0f;
  Rng rng(9);
  for (auto _ : state) benchmark::DoNotOptimize(compute_gradients(m, v, target, rng, TrainOptions{}));
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

static void BM_Hausdorff95(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  Mask a({n, n, n}), b({n, n, n});
  const double r = static_cast<double>(n) / 4.0;
  for (std::int64_t z = 0; z < n; ++z)
    for (std::int64_t y = 0; y < n; ++y)
      for (std::int64_t x = 0; x < n; ++x) {
        const double dz = z - n / 2.0, dy = y - n / 2.0, dx = x - n / 2.0;
        a.at(z, y, x) = dz * dz + dy * dy + dx * dx < r * r;
        b.at(z, y, x) = (dz - 2) * (dz - 2) + dy * dy + dx * dx < 1.2 * r * r;
      }
  for (auto _ : state) benchmark::DoNotOptimize(hausdorff(a, b, 95));
}
BENCHMARK(BM_Hausdorff95)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
