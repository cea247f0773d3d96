// SPDX-License-Identifier: Apache-2.0
//
// Serial reference kernels vs the OpenMP/GEMM kernels at training shapes.
#include <benchmark/benchmark.h>

#include <vector>

#include "normprobe/kernels.hpp"
#include "normprobe/rng.hpp"

namespace {

using normprobe::Rng;
using normprobe::kernels::ConvDims;
using normprobe::kernels::LinearDims;

std::vector<float> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

ConvDims conv_dims(const benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  const auto channels = static_cast<std::size_t>(state.range(1));
  return ConvDims{batch, channels, channels, 200, 5, 2};
}

void set_conv_counters(benchmark::State& state, const ConvDims& d, double passes) {
  const double macs = static_cast<double>(d.n * d.cout * d.s_out() * d.cin * d.k) * passes;
  state.counters["GMAC/s"] = benchmark::Counter(macs * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

template <bool Reference>
void BM_ConvForward(benchmark::State& state) {
  const ConvDims d = conv_dims(state);
  const auto x = random_vector(d.n * d.cin * d.s_in, 1);
  const auto w = random_vector(d.cout * d.cin * d.k, 2);
  const auto b = random_vector(d.cout, 3);
  std::vector<float> y(d.n * d.cout * d.s_out());
  for (auto _ : state) {
    if constexpr (Reference) {
      normprobe::kernels::reference::conv1d_forward<float>(d, x, w, b, y);
    } else {
      normprobe::kernels::conv1d_forward<float>(d, x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  set_conv_counters(state, d, 1.0);
}

template <bool Reference>
void BM_ConvBackward(benchmark::State& state) {
  const ConvDims d = conv_dims(state);
  const auto x = random_vector(d.n * d.cin * d.s_in, 1);
  const auto w = random_vector(d.cout * d.cin * d.k, 2);
  const auto gy = random_vector(d.n * d.cout * d.s_out(), 3);
  std::vector<float> gx(x.size()), gw(w.size()), gb(d.cout);
  for (auto _ : state) {
    if constexpr (Reference) {
      normprobe::kernels::reference::conv1d_backward<float>(d, x, w, gy, gx, gw, gb);
    } else {
      normprobe::kernels::conv1d_backward<float>(d, x, w, gy, gx, gw, gb);
    }
    benchmark::DoNotOptimize(gx.data());
  }
  set_conv_counters(state, d, 2.0);
}

template <bool Reference>
void BM_LinearForward(benchmark::State& state) {
  const LinearDims d{static_cast<std::size_t>(state.range(0)), 32, static_cast<std::size_t>(state.range(1))};
  const auto x = random_vector(d.rows * d.in, 1);
  const auto w = random_vector(d.out * d.in, 2);
  const auto b = random_vector(d.out, 3);
  std::vector<float> y(d.rows * d.out);
  for (auto _ : state) {
    if constexpr (Reference) {
      normprobe::kernels::reference::linear_forward<float>(d, x, w, b, y);
    } else {
      normprobe::kernels::linear_forward<float>(d, x, w, b, y);
    }
    benchmark::DoNotOptimize(y.data());
  }
  const double macs = static_cast<double>(d.rows * d.in * d.out);
  state.counters["GMAC/s"] = benchmark::Counter(macs * 1e-9, benchmark::Counter::kIsIterationInvariantRate);
}

}  // namespace

BENCHMARK(BM_ConvForward<true>)->Name("conv_forward/reference")->Args({16, 32});
BENCHMARK(BM_ConvForward<false>)->Name("conv_forward/parallel")->Args({16, 32})->Args({4, 32});
BENCHMARK(BM_ConvBackward<true>)->Name("conv_backward/reference")->Args({16, 32});
BENCHMARK(BM_ConvBackward<false>)->Name("conv_backward/parallel")->Args({16, 32})->Args({4, 32});
BENCHMARK(BM_LinearForward<true>)->Name("linear_forward/reference")->Args({1600, 64});
BENCHMARK(BM_LinearForward<false>)->Name("linear_forward/parallel")->Args({1600, 64})->Args({1600, 256});

BENCHMARK_MAIN();
