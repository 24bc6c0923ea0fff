#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "support.hpp"
#include "utilise/checkpoint.hpp"
#include "utilise/container.hpp"
#include "utilise/model.hpp"

namespace utilise {
namespace {

using testing::tiny_config;

nn::ModelInput<double> random_input(Rng& rng, const ModelConfig& c, int batch, int frames, int hw) {
  nn::ModelInput<double> in;
  in.batch = batch;
  in.frames = frames;
  in.images = nn::Volume<double>(batch * frames, c.input_channels, hw, hw);
  for (double& v : in.images.data) v = rng.uniform();
  int day = 3;
  for (int i = 0; i < batch * frames; ++i) {
    if (i % frames == 0) day = rng.uniform_int(0, 30);
    in.days.push_back(day);
    day += rng.uniform_int(1, 15);
  }
  return in;
}

TEST(ModelConfig, ValidateNamesConstraint) {
  ModelConfig c = tiny_config();
  c.heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("heads"), std::string::npos);
  }
  c = tiny_config();
  c.output_channels = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny_config();
  EXPECT_NO_THROW(c.validate_input(16, 24));
  EXPECT_THROW(c.validate_input(12, 16), std::invalid_argument);
}

TEST(Model, ShapesAndOutputRange) {
  Rng rng(1);
  UTilise<double> m(tiny_config());
  m.initialize(rng);
  const auto in = random_input(rng, m.config(), 2, 3, 16);
  nn::ForwardCache<double> cache;
  m.forward(in, cache);
  EXPECT_EQ(cache.prediction.n, 6);
  EXPECT_EQ(cache.prediction.c, 2);
  EXPECT_EQ(cache.prediction.h, 16);
  EXPECT_EQ(cache.prediction.w, 16);
  for (double v : cache.prediction.data) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const AttentionVolume att = m.attention(cache, 1);
  EXPECT_EQ(att.heads, 2);
  EXPECT_EQ(att.frames, 3);
  EXPECT_EQ(att.height, 2);
  EXPECT_EQ(att.width, 2);
  for (int g = 0; g < 2; ++g) {
    for (int q = 0; q < 3; ++q) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += att.at(g, q, k, 1, 0);
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Model, InitializationIsSeedDeterministic) {
  Rng a(9), b(9), c(10);
  UTilise<float> m1(tiny_config()), m2(tiny_config()), m3(tiny_config());
  m1.initialize(a);
  m2.initialize(b);
  m3.initialize(c);
  EXPECT_EQ(m1.export_weights(), m2.export_weights());
  EXPECT_FALSE(m1.export_weights() == m3.export_weights());
  EXPECT_EQ(m1.parameter_count(), m1.export_weights().parameter_count());
}

TEST(Model, FramePermutationEquivariantWithoutPositionalEncoding) {
  ModelConfig c = tiny_config();
  c.positional_encoding = PositionalEncodingMode::kNone;
  Rng rng(2);
  UTilise<double> m(c);
  m.initialize(rng);
  const int T = 4;
  const auto in = random_input(rng, c, 1, T, 8);
  const int perm[T] = {2, 0, 3, 1};
  nn::ModelInput<double> pin = in;
  for (int t = 0; t < T; ++t) {
    std::copy(in.images.frame(perm[t]), in.images.frame(perm[t]) + in.images.frame_size(), pin.images.frame(t));
  }
  nn::ForwardCache<double> a, b;
  m.forward(in, a);
  m.forward(pin, b);
  for (int t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < a.prediction.frame_size(); ++i) {
      ASSERT_NEAR(b.prediction.frame(t)[i], a.prediction.frame(perm[t])[i], 1e-12);
    }
  }
}

TEST(Model, NoTemporalEncoderProcessesFramesIndependently) {
  ModelConfig c = tiny_config();
  c.temporal_encoder = false;
  Rng rng(3);
  UTilise<double> m(c);
  m.initialize(rng);
  auto in = random_input(rng, c, 1, 3, 8);
  nn::ForwardCache<double> a, b;
  m.forward(in, a);
  for (std::size_t i = 0; i < in.images.frame_size(); ++i) in.images.frame(2)[i] = 0.5;
  m.forward(in, b);
  for (std::size_t i = 0; i < 2 * a.prediction.frame_size(); ++i) EXPECT_EQ(a.prediction.data[i], b.prediction.data[i]);
  const AttentionVolume att = m.attention(a, 0);
  for (int q = 0; q < 3; ++q) {
    for (int k = 0; k < 3; ++k) EXPECT_EQ(att.at(0, q, k, 0, 0), q == k ? 1.0f : 0.0f);
  }
  // No temporal parameters are exposed.
  for (const auto* p : m.parameters()) EXPECT_NE(p->name.rfind("temporal", 0), 0u) << p->name;
}

TEST(Model, ZeroHeadGivesSigmoidOfBias) {
  Rng rng(4);
  UTilise<double> m(tiny_config());
  m.initialize(rng);
  for (auto* p : m.parameters()) {
    if (p->name == "head.weight") p->fill(0.0);
    if (p->name == "head.bias") {
      p->value[0] = 0.3;
      p->value[1] = -1.2;
    }
  }
  const auto in = random_input(rng, m.config(), 1, 2, 8);
  nn::ForwardCache<double> cache;
  m.forward(in, cache);
  for (int n = 0; n < 2; ++n) {
    for (int y = 0; y < 8; ++y) {
      EXPECT_DOUBLE_EQ(cache.prediction.at(n, 0, y, 3), 1.0 / (1.0 + std::exp(-0.3)));
      EXPECT_DOUBLE_EQ(cache.prediction.at(n, 1, y, 5), 1.0 / (1.0 + std::exp(1.2)));
    }
  }
}

TEST(Model, RejectsBadInputs) {
  Rng rng(5);
  UTilise<double> m(tiny_config());
  m.initialize(rng);
  auto in = random_input(rng, m.config(), 1, 2, 8);
  nn::ForwardCache<double> cache;
  auto bad = in;
  bad.images = nn::Volume<double>(2, 3, 8, 8);
  EXPECT_THROW(m.forward(bad, cache), std::invalid_argument);
  bad = in;
  bad.images = nn::Volume<double>(2, 2, 12, 12);
  EXPECT_THROW(m.forward(bad, cache), std::invalid_argument);
  bad = in;
  bad.days.pop_back();
  EXPECT_THROW(m.forward(bad, cache), std::invalid_argument);
}

TEST(Upsample, IdentityAtSameSize) {
  Rng rng(6);
  AttentionVolume a(2, 3, 4, 5);
  for (float& v : a.scores) v = static_cast<float>(rng.uniform());
  const AttentionVolume b = upsample_attention(a, 4, 5);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_THROW(upsample_attention(a, 2, 5), std::invalid_argument);
}

TEST(Upsample, ConstantMapStaysConstantAndKeySumsPreserved) {
  Rng rng(7);
  const int T = 3;
  AttentionVolume a(1, T, 2, 2);
  for (int q = 0; q < T; ++q) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        std::vector<double> w(T);
        for (double& v : w) v = rng.uniform(0.1, 1.0);
        const double s = std::accumulate(w.begin(), w.end(), 0.0);
        for (int k = 0; k < T; ++k) a.at(0, q, k, y, x) = static_cast<float>(w[k] / s);
      }
    }
  }
  const AttentionVolume up = upsample_attention(a, 8, 8);
  for (int q = 0; q < T; ++q) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        double s = 0.0;
        for (int k = 0; k < T; ++k) s += up.at(0, q, k, y, x);
        ASSERT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
  AttentionVolume c(1, 1, 3, 3);
  std::fill(c.scores.begin(), c.scores.end(), 0.25f);
  for (float v : upsample_attention(c, 12, 12).scores) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Upsample, InterpolationTaps) {
  // 2 -> 4: centers map to -0.25, 0.25, 0.75, 1.25 in source coordinates.
  const nn::InterpAxis ax = nn::bilinear_axis(2, 4);
  EXPECT_EQ(ax.lo, (std::vector<int>{0, 0, 0, 1}));
  EXPECT_EQ(ax.hi, (std::vector<int>{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(ax.frac[0], 0.0);
  EXPECT_DOUBLE_EQ(ax.frac[1], 0.25);
  EXPECT_DOUBLE_EQ(ax.frac[2], 0.75);
}

TEST(WeightedSkip, IdentityAndUniformAttention) {
  Rng rng(8);
  const int B = 2, T = 3, C = 2, H = 3, W = 2;
  nn::Volume<double> f(B * T, C, H, W);
  for (double& v : f.data) v = rng.uniform();
  const std::size_t plane = H * W;
  std::vector<double> eye(static_cast<std::size_t>(B) * T * T * plane, 0.0);
  std::vector<double> uni(eye.size(), 1.0 / T);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      for (std::size_t p = 0; p < plane; ++p) eye[((static_cast<std::size_t>(b) * T + t) * T + t) * plane + p] = 1.0;
    }
  }
  const auto same = nn::weighted_skip_mix(f, eye, B, T);
  EXPECT_EQ(same.data, f.data);
  const auto mean = nn::weighted_skip_mix(f, uni, B, T);
  for (int b = 0; b < B; ++b) {
    for (int t = 0; t < T; ++t) {
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
          for (int x = 0; x < W; ++x) {
            double s = 0.0;
            for (int k = 0; k < T; ++k) s += f.at(b * T + k, c, y, x);
            ASSERT_NEAR(mean.at(b * T + t, c, y, x), s / T, 1e-12);
          }
        }
      }
    }
  }
}

TEST(Weights, ExportImportRoundTrip) {
  Rng rng(9);
  UTilise<float> a(tiny_config()), b(tiny_config());
  a.initialize(rng);
  b.import_weights(a.export_weights());
  EXPECT_EQ(a.export_weights(), b.export_weights());

  ModelWeights w = a.export_weights();
  w.tensors[0].values[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(b.import_weights(w), std::invalid_argument);
  w = a.export_weights();
  w.tensors.pop_back();
  EXPECT_THROW(b.import_weights(w), std::invalid_argument);
  w = a.export_weights();
  w.config.filters = 4;
  EXPECT_THROW(b.import_weights(w), std::invalid_argument);
  w = a.export_weights();
  w.tensors[1].shape[0] += 1;
  EXPECT_THROW(b.import_weights(w), std::invalid_argument);
}

TEST(Weights, CheckpointFileRoundTrip) {
  testing::TempDir dir("ckpt");
  Rng rng(10);
  ModelConfig c = tiny_config();
  c.positional_encoding = PositionalEncodingMode::kEnumeration;
  c.tau = 321.5;
  UTilise<float> a(c);
  a.initialize(rng);
  const auto path = dir.path() / "w.ckpt";
  save_weights(a.export_weights(), path);
  const ModelWeights back = load_weights(path);
  EXPECT_EQ(back, a.export_weights());
  EXPECT_EQ(config_from_json(config_to_json(c)), c);

  // Corrupt the magic.
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  EXPECT_THROW(load_weights(path), CheckpointError);
  EXPECT_THROW(load_weights(dir.path() / "missing.ckpt"), MissingFileError);
}

TEST(Weights, FloatAndDoubleModelsAgree) {
  Rng rng(11);
  UTilise<float> mf(tiny_config());
  mf.initialize(rng);
  UTilise<double> md(tiny_config());
  md.import_weights(mf.export_weights());
  const auto ind = random_input(rng, md.config(), 1, 3, 8);
  nn::ModelInput<float> inf;
  inf.batch = ind.batch;
  inf.frames = ind.frames;
  inf.days = ind.days;
  inf.images = nn::Volume<float>(ind.images.n, ind.images.c, ind.images.h, ind.images.w);
  for (std::size_t i = 0; i < ind.images.data.size(); ++i) inf.images.data[i] = static_cast<float>(ind.images.data[i]);
  nn::ForwardCache<float> cf;
  nn::ForwardCache<double> cd;
  mf.forward(inf, cf);
  md.forward(ind, cd);
  for (std::size_t i = 0; i < cd.prediction.data.size(); ++i) ASSERT_NEAR(cf.prediction.data[i], cd.prediction.data[i], 1e-4);
}

}  // namespace
}  // namespace utilise
