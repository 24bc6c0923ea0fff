#include <benchmark/benchmark.h>

#include "support.hpp"
#include "utilise/baselines.hpp"

namespace {

using namespace utilise;

void BM_Baseline(benchmark::State& state) {
  const auto method = static_cast<BaselineMethod>(state.range(0));
  Rng rng(3);
  const SampleRecord r = testing::random_record(rng, Shape4{10, 4, 64, 64}, 0.7);
  for (auto _ : state) {
    BaselineResult res = impute_baseline(r, method);
    benchmark::DoNotOptimize(res.values.data());
  }
  state.SetLabel(to_string(method));
  state.SetItemsProcessed(state.iterations() * 64 * 64);
}
BENCHMARK(BM_Baseline)->DenseRange(0, 2)->Unit(benchmark::kMicrosecond);

}  // namespace
