#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace utilise {

// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence is
// fixed by the standard) and derives real-valued draws by hand so results do
// not depend on the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] (inclusive), unbiased.
  int uniform_int(int lo, int hi);

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; caches the second value.
  double normal();

  // Fisher-Yates shuffle of `values`.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<int>(i) - 1));
      std::swap(values[i - 1], values[j]);
    }
  }

  // `k` distinct indices from [0, n), in ascending order.
  std::vector<int> sample_without_replacement(int n, int k);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && a.has_spare_ == b.has_spare_ && a.spare_ == b.spare_;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t value);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);
std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t b = 0);

}  // namespace utilise
