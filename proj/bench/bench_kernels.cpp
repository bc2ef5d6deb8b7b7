#include <benchmark/benchmark.h>

#include <vector>

#include "tfuse/kernels.hpp"
#include "tfuse/rng.hpp"

using namespace tfuse;

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Shapes of the detector's middle backbone block at batch 8.
kernels::ConvGeometry backbone_conv() {
  kernels::ConvGeometry g;
  g.batch = 8;
  g.in_channels = 8;
  g.in_height = g.in_width = 32;
  g.out_channels = 16;
  g.kernel = 3;
  g.stride = 2;
  g.padding = 1;
  return g;
}

template <auto Kernel>
void conv_forward(benchmark::State& state) {
  const auto g = backbone_conv();
  const auto x = noise(g.batch * g.in_channels * g.in_height * g.in_width, 1);
  const auto k = noise(g.out_channels * g.in_per_group() * g.kernel * g.kernel, 2);
  const auto b = noise(g.out_channels, 3);
  std::vector<double> out(g.batch * g.out_channels * g.out_height() * g.out_width());
  for (auto _ : state) {
    Kernel(g, x, k, b, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void conv_backward_params(benchmark::State& state) {
  const auto g = backbone_conv();
  const auto x = noise(g.batch * g.in_channels * g.in_height * g.in_width, 1);
  const auto go = noise(g.batch * g.out_channels * g.out_height() * g.out_width(), 4);
  std::vector<double> gk(g.out_channels * g.in_per_group() * g.kernel * g.kernel), gb(g.out_channels);
  for (auto _ : state) {
    Kernel(g, go, x, gk, gb);
    benchmark::DoNotOptimize(gk.data());
  }
}

// One deformable tap over the riffled 32-channel stack at feature resolution.
kernels::SampleGeometry tap_geometry() {
  return {50, 32, 8, 8, 8, 8};
}

template <auto Kernel>
void bilinear_forward(benchmark::State& state) {
  const auto g = tap_geometry();
  const auto x = noise(g.batch * g.channels * g.in_height * g.in_width, 5);
  auto c = noise(g.batch * 2 * g.out_height * g.out_width, 6);
  for (auto& v : c) v = 3.5 + 4.0 * v;
  std::vector<double> out(g.batch * g.channels * g.out_height * g.out_width);
  for (auto _ : state) {
    Kernel(g, x, c, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <auto Kernel>
void bilinear_backward_coords(benchmark::State& state) {
  const auto g = tap_geometry();
  const auto x = noise(g.batch * g.channels * g.in_height * g.in_width, 5);
  auto c = noise(g.batch * 2 * g.out_height * g.out_width, 6);
  for (auto& v : c) v = 3.5 + 4.0 * v;
  const auto go = noise(g.batch * g.channels * g.out_height * g.out_width, 7);
  std::vector<double> gc(c.size());
  for (auto _ : state) {
    Kernel(g, go, x, c, gc);
    benchmark::DoNotOptimize(gc.data());
  }
}

}  // namespace

BENCHMARK(conv_forward<kernels::serial::conv_forward>)->Name("conv_forward/serial");
BENCHMARK(conv_forward<kernels::omp::conv_forward>)->Name("conv_forward/omp");
BENCHMARK(conv_backward_params<kernels::serial::conv_backward_params>)->Name("conv_backward_params/serial");
BENCHMARK(conv_backward_params<kernels::omp::conv_backward_params>)->Name("conv_backward_params/omp");
BENCHMARK(bilinear_forward<kernels::serial::bilinear_forward>)->Name("bilinear_forward/serial");
BENCHMARK(bilinear_forward<kernels::omp::bilinear_forward>)->Name("bilinear_forward/omp");
BENCHMARK(bilinear_backward_coords<kernels::serial::bilinear_backward_coords>)->Name("bilinear_backward_coords/serial");
BENCHMARK(bilinear_backward_coords<kernels::omp::bilinear_backward_coords>)->Name("bilinear_backward_coords/omp");

BENCHMARK_MAIN();
