#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "utilise/baselines.hpp"

namespace utilise {
namespace {

// One-channel 1x1 record from a value list; NaN marks a gap.
SampleRecord timeline(const std::vector<double>& values, const std::vector<int>& days) {
  SampleRecord r = SampleRecord::make("tl", {static_cast<int>(values.size()), 1, 1, 1}, days);
  for (std::size_t t = 0; t < values.size(); ++t) {
    const bool gap = std::isnan(values[t]);
    r.images[t] = gap ? 1.0f : static_cast<float>(values[t]);
    r.mask[t] = gap ? 0.0f : 1.0f;
  }
  return r;
}

const double kGap = std::nan("");

TEST(Last, Examples) {
  EXPECT_NEAR(impute_last(timeline({0.2, kGap, kGap}, {0, 5, 10})).values[2], 0.2, 1e-7);
  const auto r = impute_last(timeline({kGap, 0.4, kGap}, {0, 5, 10})).values;
  for (double v : r) EXPECT_NEAR(v, 0.4, 1e-7);
}

TEST(Closest, Examples) {
  const auto a = impute_closest(timeline({0.1, kGap, 0.7}, {0, 10, 15})).values;
  EXPECT_DOUBLE_EQ(a[1], a[2]);
  const auto b = impute_closest(timeline({0.1, kGap, 0.7}, {0, 5, 10})).values;
  EXPECT_DOUBLE_EQ(b[1], b[0]);
}

TEST(Linear, Examples) {
  const auto a = impute_linear(timeline({0.2, kGap, 0.4}, {0, 5, 10})).values;
  const double v0 = static_cast<float>(0.2), v1 = static_cast<float>(0.4);
  EXPECT_NEAR(a[1], v0 + 0.5 * (v1 - v0), 1e-12);
  const auto b = impute_linear(timeline({0.0, kGap, 0.3}, {0, 5, 15})).values;
  EXPECT_NEAR(b[1], static_cast<float>(0.3) / 3.0, 1e-12);
  const auto c = impute_linear(timeline({kGap, 0.5, kGap}, {0, 5, 15})).values;
  EXPECT_DOUBLE_EQ(c[0], static_cast<float>(0.5));
  EXPECT_DOUBLE_EQ(c[2], static_cast<float>(0.5));
}

std::vector<double> oracle(const SampleRecord& r, BaselineMethod method) {
  const int T = r.frames(), C = r.channels(), H = r.height(), W = r.width();
  std::vector<double> out(r.images.begin(), r.images.end());
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      std::vector<int> obs;
      for (int t = 0; t < T; ++t) {
        if (r.valid(t, y, x) == 1.0f) obs.push_back(t);
      }
      if (obs.empty()) continue;
      for (int c = 0; c < C; ++c) {
        for (int t = 0; t < T; ++t) {
          if (r.valid(t, y, x) == 1.0f) continue;
          int prev = -1, next = -1;
          for (int s : obs) {
            if (s < t) prev = s;
            if (s > t && next < 0) next = s;
          }
          double v = 0.0;
          if (method == BaselineMethod::kLast) {
            v = r.image(prev >= 0 ? prev : next, c, y, x);
          } else if (method == BaselineMethod::kClosest) {
            int best = obs[0];
            for (int s : obs) {
              if (std::abs(r.days[s] - r.days[t]) < std::abs(r.days[best] - r.days[t])) best = s;
            }
            v = r.image(best, c, y, x);
          } else if (prev < 0 || next < 0) {
            v = r.image(prev >= 0 ? prev : next, c, y, x);
          } else {
            const double a = r.image(prev, c, y, x), b = r.image(next, c, y, x);
            v = a + static_cast<double>(r.days[t] - r.days[prev]) / (r.days[next] - r.days[prev]) * (b - a);
          }
          out[r.image_index(t, c, y, x)] = v;
        }
      }
    }
  }
  return out;
}

TEST(Baselines, MatchBruteForceOracles) {
  Rng rng(10);
  for (int trial = 0; trial < 40; ++trial) {
    SampleRecord r = testing::random_record(rng, {rng.uniform_int(1, 9), 3, 3, 4}, rng.uniform(0.2, 0.9));
    for (std::size_t i = 0; i < r.images.size(); ++i) {
      if (r.mask[i / (r.channels() * r.shape.frame_pixels()) * r.shape.frame_pixels() + i % r.shape.frame_pixels()] == 0.0f) {
        r.images[i] = 1.0f;
      }
    }
    for (auto m : {BaselineMethod::kLast, BaselineMethod::kClosest, BaselineMethod::kLinear}) {
      const BaselineResult res = impute_baseline(r, m);
      const auto ref = oracle(r, m);
      ASSERT_EQ(res.values.size(), ref.size());
      for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(res.values[i], ref[i], 1e-12) << to_string(m) << " " << i;
    }
  }
}

TEST(Baselines, ValidPixelsBitIdenticalAndHullBounds) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const SampleRecord r = testing::random_record(rng, {6, 2, 4, 4}, 0.5);
    for (auto m : {BaselineMethod::kLast, BaselineMethod::kClosest, BaselineMethod::kLinear}) {
      const BaselineResult res = impute_baseline(r, m);
      for (int t = 0; t < 6; ++t) {
        for (int c = 0; c < 2; ++c) {
          for (int y = 0; y < 4; ++y) {
            for (int x = 0; x < 4; ++x) {
              const std::size_t i = r.image_index(t, c, y, x);
              if (r.valid(t, y, x) == 1.0f) {
                ASSERT_EQ(res.values[i], static_cast<double>(r.images[i]));
                continue;
              }
              double lo = 2.0, hi = -1.0;
              bool member = false;
              for (int s = 0; s < 6; ++s) {
                if (r.valid(s, y, x) != 1.0f) continue;
                lo = std::min(lo, static_cast<double>(r.image(s, c, y, x)));
                hi = std::max(hi, static_cast<double>(r.image(s, c, y, x)));
                member = member || res.values[i] == r.image(s, c, y, x);
              }
              if (hi < lo) continue;  // unobserved
              ASSERT_GE(res.values[i], lo - 1e-15);
              ASSERT_LE(res.values[i], hi + 1e-15);
              if (m != BaselineMethod::kLinear) {
                ASSERT_TRUE(member);
              }
            }
          }
        }
      }
    }
  }
}

TEST(Baselines, IdentityOnGapFreeAndUnobservedReported) {
  Rng rng(12);
  SampleRecord r = testing::random_record(rng, {4, 2, 3, 3}, 1.0);
  for (auto m : {BaselineMethod::kLast, BaselineMethod::kClosest, BaselineMethod::kLinear}) {
    const BaselineResult res = impute_baseline(r, m);
    EXPECT_EQ(res.values, std::vector<double>(r.images.begin(), r.images.end()));
    EXPECT_TRUE(res.unobserved_pixels.empty());
  }
  for (int t = 0; t < 4; ++t) r.valid(t, 1, 2) = 0.0f;
  const BaselineResult res = impute_linear(r);
  EXPECT_EQ(res.unobserved_pixels, std::vector<int>{5});
  EXPECT_EQ(res.values[r.image_index(2, 1, 1, 2)], r.image(2, 1, 1, 2));
}

TEST(Baselines, MethodNames) {
  for (auto m : {BaselineMethod::kLast, BaselineMethod::kClosest, BaselineMethod::kLinear}) {
    EXPECT_EQ(baseline_from_string(to_string(m)), m);
  }
  EXPECT_THROW(baseline_from_string("model"), std::invalid_argument);
}

}  // namespace
}  // namespace utilise
