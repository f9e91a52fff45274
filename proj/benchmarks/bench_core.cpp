// Microbenchmarks for the kernels that dominate training and map rendering.
#include <benchmark/benchmark.h>

#include <vector>

#include "neurohybrid/cohort.hpp"
#include "neurohybrid/gradcam.hpp"
#include "neurohybrid/ops.hpp"
#include "neurohybrid/rng.hpp"

using namespace neurohybrid;

namespace {

Tensor<float> randn(const Shape& shape, uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t(shape, 0.0f);
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

// Default branch geometry: batch 2, mri + 4 masks, 24^3 crop, 8 filters.
void bench_conv3d_forward(benchmark::State& state) {
  const auto x = randn(Shape{2, 5, 24, 24, 24}, 1);
  const auto k = randn(Shape{8, 5, 3, 3, 3}, 2);
  const auto b = randn(Shape{8}, 3);
  for (auto _ : state) {
    auto y = conv3d(x, k, b, Dims3{1, 1, 1}, Dims3{1, 1, 1});
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bench_conv3d_forward)->Unit(benchmark::kMillisecond);

void bench_conv3d_train_step(benchmark::State& state) {
  auto x = randn(Shape{2, 5, 24, 24, 24}, 1);
  auto k = randn(Shape{8, 5, 3, 3, 3}, 2);
  auto b = randn(Shape{8}, 3);
  x.set_requires_grad(true);
  k.set_requires_grad(true);
  b.set_requires_grad(true);
  for (auto _ : state) {
    Tape<float> tape;
    auto y = conv3d(x, k, b, Dims3{1, 1, 1}, Dims3{1, 1, 1}, &tape);
    auto loss = sum(y, &tape);
    tape.backward(loss);
    benchmark::DoNotOptimize(k.grad());
    tape.zero_gradients();
  }
}
BENCHMARK(bench_conv3d_train_step)->Unit(benchmark::kMillisecond);

void bench_maxpool3d(benchmark::State& state) {
  const auto x = randn(Shape{2, 8, 24, 24, 24}, 4);
  for (auto _ : state) {
    auto y = maxpool3d(x, Dims3{2, 2, 2}, Dims3{2, 2, 2});
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bench_maxpool3d)->Unit(benchmark::kMillisecond);

void bench_dense_head(benchmark::State& state) {
  const auto x = randn(Shape{8, 96}, 5);
  const auto w = randn(Shape{96, 256}, 6);
  const auto b = randn(Shape{256}, 7);
  for (auto _ : state) {
    auto y = dense(x, w, b);
    benchmark::DoNotOptimize(y.data());
  }
}
BENCHMARK(bench_dense_head);

// Grad-CAM path: last conv-block resolution up to the input crop.
void bench_upsample_tricubic(benchmark::State& state) {
  Rng rng(8);
  std::vector<double> low(6 * 6 * 6);
  for (auto& v : low) v = rng.uniform();
  for (auto _ : state) {
    auto hi = upsample_tricubic(low, Dims3{6, 6, 6}, Dims3{24, 24, 24});
    benchmark::DoNotOptimize(hi.data());
  }
}
BENCHMARK(bench_upsample_tricubic)->Unit(benchmark::kMillisecond);

void bench_generate_subject(benchmark::State& state) {
  const PhantomSpec spec = PhantomSpec::defaults();
  const ClassProfile& pd = spec.profile("PD");
  uint64_t i = 0;
  for (auto _ : state) {
    Rng rng(derive_seed(1009, "bench", i++));
    auto subject = generate_subject(spec, pd, "pd-bench", rng);
    benchmark::DoNotOptimize(subject.icv_mm3);
  }
}
BENCHMARK(bench_generate_subject)->Unit(benchmark::kMillisecond);

void bench_region_crop(benchmark::State& state) {
  const PhantomSpec spec = PhantomSpec::defaults();
  Rng rng(derive_seed(1009, "bench-crop"));
  const Subject subject = generate_subject(spec, spec.profile("PD"), "pd-bench", rng);
  for (auto _ : state) {
    auto crop = extract_region_crop(subject, Region::Brainstem, Dims3{24, 24, 24});
    benchmark::DoNotOptimize(crop.mri.data());
  }
}
BENCHMARK(bench_region_crop)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
