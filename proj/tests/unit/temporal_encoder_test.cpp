#include <gtest/gtest.h>

#include <cmath>

#include "utilise/temporal_encoder.hpp"

namespace utilise::nn {
namespace {

std::vector<double> random_tokens(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

TEST(TemporalEncoder, AttentionRowsSumToOne) {
  Rng rng(11);
  TemporalEncoder<double> enc(8, 2, 4, 2, 8);
  enc.initialize(rng);
  const int pixels = 5, frames = 7;
  TemporalCache<double> cache;
  const auto out = enc.forward(random_tokens(rng, pixels * frames * 8), pixels, frames, cache);
  EXPECT_EQ(out.size(), static_cast<std::size_t>(pixels * frames * 8));
  ASSERT_EQ(cache.attention.size(), static_cast<std::size_t>(pixels * 2 * frames * frames));
  for (std::size_t row = 0; row < cache.attention.size() / frames; ++row) {
    double s = 0.0;
    for (int k = 0; k < frames; ++k) {
      const double a = cache.attention[row * frames + k];
      EXPECT_GE(a, 0.0);
      s += a;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(TemporalEncoder, SingleFrameAttendsToItself) {
  Rng rng(12);
  TemporalEncoder<double> enc(4, 2, 2, 1, 4);
  enc.initialize(rng);
  TemporalCache<double> cache;
  enc.forward(random_tokens(rng, 3 * 4), 3, 1, cache);
  for (double a : cache.attention) EXPECT_DOUBLE_EQ(a, 1.0);
}

TEST(TemporalEncoder, PixelsAreIndependent) {
  Rng rng(13);
  TemporalEncoder<double> enc(8, 4, 2, 4, 6);
  enc.initialize(rng);
  const int frames = 4;
  auto tokens = random_tokens(rng, 2 * frames * 8);
  TemporalCache<double> c1, c2;
  const auto a = enc.forward(tokens, 2, frames, c1);
  for (std::size_t i = frames * 8; i < tokens.size(); ++i) tokens[i] += 3.0;
  const auto b = enc.forward(tokens, 2, frames, c2);
  for (std::size_t i = 0; i < frames * 8u; ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
}

TEST(TemporalEncoder, RejectsIndivisibleDepth) {
  EXPECT_THROW((TemporalEncoder<double>(6, 4, 2, 1, 6)), std::invalid_argument);
  EXPECT_THROW((TemporalEncoder<double>(8, 2, 2, 3, 6)), std::invalid_argument);
}

TEST(TemporalEncoder, GradientsMatchFiniteDifferences) {
  Rng rng(14);
  TemporalEncoder<double> enc(8, 2, 3, 2, 10);
  enc.initialize(rng);
  const int pixels = 3, frames = 5;
  const auto tokens = random_tokens(rng, pixels * frames * 8);
  TemporalCache<double> cache;
  const auto out = enc.forward(tokens, pixels, frames, cache);
  const auto g_out = random_tokens(rng, out.size());
  const auto g_att = random_tokens(rng, cache.attention.size());
  auto loss = [&](const std::vector<double>& z) {
    TemporalCache<double> c;
    const auto y = enc.forward(z, pixels, frames, c);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += g_out[i] * y[i];
    for (std::size_t i = 0; i < c.attention.size(); ++i) s += g_att[i] * c.attention[i];
    return s;
  };
  for (Param<double>* p : enc.parameters()) p->zero_grad();
  const auto d_tokens = enc.backward(cache, g_out, g_att);
  const double h = 1e-5;
  for (Param<double>* p : enc.parameters()) {
    for (std::size_t i = 0; i < p->size(); i += 7) {
      const double old = p->value[i];
      p->value[i] = old + h;
      const double lp = loss(tokens);
      p->value[i] = old - h;
      const double lm = loss(tokens);
      p->value[i] = old;
      const double fd = (lp - lm) / (2 * h);
      ASSERT_NEAR(p->grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << p->name << "[" << i << "]";
    }
  }
  auto z = tokens;
  for (std::size_t i = 0; i < z.size(); i += 3) {
    z[i] = tokens[i] + h;
    const double lp = loss(z);
    z[i] = tokens[i] - h;
    const double lm = loss(z);
    z[i] = tokens[i];
    const double fd = (lp - lm) / (2 * h);
    ASSERT_NEAR(d_tokens[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "token " << i;
  }
}

TEST(GroupNorm, NormalizesEachGroup) {
  Rng rng(15);
  const int rows = 4, channels = 12, groups = 3;
  auto x = random_tokens(rng, rows * channels);
  for (double& v : x) v = 5.0 + 3.0 * v;
  std::vector<double> gamma(channels, 1.0), beta(channels, 0.0), y(x.size()), xhat(x.size()),
      rstd(rows * groups);
  group_norm_forward(x.data(), rows, channels, groups, gamma.data(), beta.data(), y.data(), xhat.data(),
                     rstd.data());
  const int per = channels / groups;
  for (int r = 0; r < rows; ++r) {
    for (int g = 0; g < groups; ++g) {
      double m = 0.0, v = 0.0;
      for (int c = 0; c < per; ++c) m += y[r * channels + g * per + c];
      m /= per;
      for (int c = 0; c < per; ++c) v += std::pow(y[r * channels + g * per + c] - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-12);
      // Epsilon inside the square root keeps the variance a hair under one.
      EXPECT_NEAR(v / per, 1.0, 1e-3);
    }
  }
}

}  // namespace
}  // namespace utilise::nn
