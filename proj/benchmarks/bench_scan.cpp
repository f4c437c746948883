// Informational timings: es2d vs ss2d, the raw recurrence, and conv2d.
#include <benchmark/benchmark.h>

#include "evmamba/ops.hpp"
#include "evmamba/random.hpp"
#include "evmamba/scan_plan.hpp"
#include "evmamba/ssm.hpp"
#include "evmamba/tape.hpp"

namespace {

using namespace evm;

void BM_Es2d(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  const auto p = static_cast<std::size_t>(state.range(1));
  NoGradScope no_grad;
  Rng rng(0);
  const SsmParams ssm = SsmParams::init(16, 16, rng);
  const Tensor x = rng.uniform_tensor({16, hw, hw}, -1, 1);
  const ScanPlan plan = build_plan(hw, hw, p);
  for (auto _ : state) benchmark::DoNotOptimize(es2d(x, ssm, plan));
  state.counters["tokens"] = static_cast<double>(es2d_steps(plan));
}
BENCHMARK(BM_Es2d)->Args({14, 1})->Args({14, 2})->Args({28, 2})->Args({56, 2})->Unit(benchmark::kMillisecond);

void BM_Ss2d(benchmark::State& state) {
  const auto hw = static_cast<std::size_t>(state.range(0));
  NoGradScope no_grad;
  Rng rng(0);
  const SsmParams ssm = SsmParams::init(16, 16, rng);
  const Tensor x = rng.uniform_tensor({16, hw, hw}, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(ss2d(x, ssm));
  state.counters["tokens"] = static_cast<double>(ss2d_steps(hw, hw));
}
BENCHMARK(BM_Ss2d)->Arg(14)->Arg(28)->Arg(56)->Unit(benchmark::kMillisecond);

void BM_SelectiveScan(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const std::size_t d = 16, n = 16;
  NoGradScope no_grad;
  Rng rng(1);
  const DiscreteParams dp{rng.uniform_tensor({len, d, n}, 0.1, 0.9), rng.uniform_tensor({len, d, n}, -1, 1),
                          rng.uniform_tensor({len, d, n}, -1, 1)};
  const Tensor x = rng.uniform_tensor({len, d}, -1, 1);
  const Tensor h0 = Tensor::zeros({d, n});
  for (auto _ : state) benchmark::DoNotOptimize(selective_scan(x, dp, h0));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(len));
}
BENCHMARK(BM_SelectiveScan)->Arg(64)->Arg(256)->Arg(1024);

void BM_Conv2d(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto groups = static_cast<std::size_t>(state.range(1));
  NoGradScope no_grad;
  Rng rng(2);
  const Tensor x = rng.uniform_tensor({c, 28, 28}, -1, 1);
  const Tensor w = rng.uniform_tensor({c, c / groups, 3, 3}, -1, 1);
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(x, w, nullptr, {1, 1, groups}));
}
BENCHMARK(BM_Conv2d)->Args({32, 1})->Args({32, 32})->Args({96, 1})->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
