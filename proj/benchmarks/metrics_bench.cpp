#include <benchmark/benchmark.h>

#include <vector>

#include "support.hpp"
#include "utilise/metrics.hpp"

namespace {

using namespace utilise;

void BM_EvaluateSequence(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  Rng rng(4);
  const Shape4 shape{10, 4, size, size};
  const SampleRecord reference = testing::random_record(rng, shape);
  const SampleRecord input = testing::random_record(rng, shape, 0.7);
  std::vector<double> pred(shape.volume());
  for (double& v : pred) v = rng.uniform();
  for (auto _ : state) {
    SequenceMetrics m = evaluate_sequence(pred, input, reference);
    benchmark::DoNotOptimize(m.mae);
  }
}
BENCHMARK(BM_EvaluateSequence)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_SsimImage(benchmark::State& state) {
  Rng rng(5);
  std::vector<double> a(128 * 128), b(128 * 128);
  for (double& v : a) v = rng.uniform();
  for (double& v : b) v = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(ssim_image(a.data(), b.data(), a.size()));
}
BENCHMARK(BM_SsimImage);

}  // namespace
