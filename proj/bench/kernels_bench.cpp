// Parallel kernels against their serial references.
#include <benchmark/benchmark.h>

#include <vector>

#include "rdpb/kernels.hpp"
#include "rdpb/rng.hpp"
#include "rdpb/tsne.hpp"

namespace {

using namespace rdpb;

std::vector<double> uniform(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Shapes of the first encoder layer at batch 128: (128 x 784) * (784 x 1024).
template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const std::size_t k = 784, n = 1024;
  const auto a = uniform(m * k, 1), b = uniform(k * n, 2);
  std::vector<double> c(m * n);
  const kernels::ConstMatrix A{a.data(), m, k, k}, B{b.data(), k, n, n};
  const kernels::Matrix C{c.data(), m, n, n};
  for (auto _ : state) {
    if constexpr (Parallel) {
      kernels::gemm(kernels::Trans::kNo, kernels::Trans::kNo, 1.0, A, B, 0.0, C);
    } else {
      kernels::serial::gemm(kernels::Trans::kNo, kernels::Trans::kNo, 1.0, A, B, 0.0, C);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(m * k * n),
                                                 benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm<true>)->Name("gemm/parallel")->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<false>)->Name("gemm/serial")->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

template <bool Parallel>
void BM_TsneDistances(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = uniform(n * 8, 3);
  for (auto _ : state) {
    auto d = Parallel ? tsne::kernels::squared_distances(x, n, 8)
                      : tsne::kernels::serial::squared_distances(x, n, 8);
    benchmark::DoNotOptimize(d.data());
  }
}
BENCHMARK(BM_TsneDistances<true>)->Name("tsne_distances/parallel")->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TsneDistances<false>)->Name("tsne_distances/serial")->Arg(1000)->Unit(benchmark::kMillisecond);

template <bool Parallel>
void BM_TsneGradient(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto p = uniform(n * n, 4);
  double total = 0.0;
  for (double& v : p) total += v = v * v;
  for (double& v : p) v /= total;
  const auto y = uniform(n * 2, 5);
  std::vector<double> grad(n * 2);
  for (auto _ : state) {
    const double kl = Parallel ? tsne::kernels::gradient(p, 1.0, y, n, grad)
                               : tsne::kernels::serial::gradient(p, 1.0, y, n, grad);
    benchmark::DoNotOptimize(kl);
  }
}
BENCHMARK(BM_TsneGradient<true>)->Name("tsne_gradient/parallel")->Arg(1000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TsneGradient<false>)->Name("tsne_gradient/serial")->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
