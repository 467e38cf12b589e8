// Serial reference vs OpenMP kernels, plus one forward/backward pass of the
// desk-scale model.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "metawpf/forecast_model.hpp"
#include "metawpf/kernels.hpp"

using namespace metawpf;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <void (*Gemm)(const kernels::GemmShape&, std::span<const double>,
                       std::span<const double>, std::span<double>)>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const kernels::GemmShape s{n, n, n, false, true};
  const auto a = random_vec(n * n, 1);
  const auto b = random_vec(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    Gemm(s, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <void (*Axpy)(double, std::span<const double>, std::span<double>)>
void BM_axpy(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_vec(n, 3);
  auto y = random_vec(n, 4);
  for (auto _ : state) {
    Axpy(1e-9, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

void BM_forward_backward(benchmark::State& state) {
  ModelConfig cfg;
  const auto params = init_params(cfg, 0);
  std::vector<InputWindow> windows(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < windows.size(); ++i) {
    windows[i] = {random_vec(cfg.lag_steps * cfg.input_features, 10 + i), cfg.lag_steps,
                  cfg.input_features, 0};
  }
  std::vector<const InputWindow*> batch;
  for (const auto& w : windows) batch.push_back(&w);
  const std::vector<double> targets(batch.size(), 0.5);
  for (auto _ : state) {
    ad::Tape tape;
    auto leaves = ad::bind(tape, params, true);
    const auto loss = batch_loss(tape, leaves, cfg, batch, targets);
    benchmark::DoNotOptimize(ad::gradient(loss, leaves, params));
  }
}

}  // namespace

BENCHMARK(BM_gemm<kernels::serial::gemm>)->Name("gemm/serial")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_gemm<kernels::omp::gemm>)->Name("gemm/omp")->RangeMultiplier(2)->Range(32, 256);
BENCHMARK(BM_axpy<kernels::serial::axpy>)->Name("axpy/serial")->Range(1 << 12, 1 << 20);
BENCHMARK(BM_axpy<kernels::omp::axpy>)->Name("axpy/omp")->Range(1 << 12, 1 << 20);
BENCHMARK(BM_forward_backward)->Name("model/forward_backward")->Arg(1)->Arg(64);

BENCHMARK_MAIN();
