#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "support.hpp"
#include "utilise/checkpoint.hpp"
#include "utilise/synthetic.hpp"
#include "utilise/train.hpp"

namespace utilise {
namespace {

using testing::TempDir;

nn::Volume<float> random_volume(Rng& rng, int n, int c, int h, int w) {
  nn::Volume<float> v(n, c, h, w);
  for (float& x : v.data) x = static_cast<float>(rng.uniform());
  return v;
}

TEST(Loss, ZeroAndConstantOffset) {
  Rng rng(1);
  const auto y = random_volume(rng, 6, 2, 3, 3);
  const std::vector<bool> pad(6, false);
  EXPECT_EQ(sequence_l1_loss(y, y, 2, pad), 0.0);
  nn::Volume<float> p = y;
  for (float& v : p.data) v += 0.05f;
  EXPECT_NEAR(sequence_l1_loss(p, y, 2, pad), 0.05, 1e-6);
}

TEST(Loss, MatchesNestedLoopWithUnequalLengths) {
  Rng rng(2);
  const int T = 5, C = 3, H = 2, W = 4;
  const auto p = random_volume(rng, 2 * T, C, H, W);
  const auto y = random_volume(rng, 2 * T, C, H, W);
  std::vector<bool> pad(2 * T, false);
  pad[3] = pad[4] = true;  // first sequence has length 3
  const int lengths[2] = {3, 5};
  double oracle = 0.0;
  for (int b = 0; b < 2; ++b) {
    double seq = 0.0;
    for (int c = 0; c < C; ++c) {
      for (int yy = 0; yy < H; ++yy) {
        for (int xx = 0; xx < W; ++xx) {
          double temporal = 0.0;
          for (int t = 0; t < lengths[b]; ++t) {
            temporal += std::abs(p.at(b * T + t, c, yy, xx) - y.at(b * T + t, c, yy, xx));
          }
          seq += temporal / lengths[b];
        }
      }
    }
    oracle += seq / (C * H * W);
  }
  oracle /= 2;
  nn::Volume<float> grad;
  EXPECT_NEAR(sequence_l1_loss(p, y, 2, pad, &grad), oracle, 1e-9);
  for (std::size_t i = 0; i < grad.frame_size(); ++i) EXPECT_EQ(grad.frame(3)[i], 0.0f);
  const float expect = 1.0f / (3.0f * C * H * W * 2);
  EXPECT_NEAR(std::abs(grad.frame(0)[0]), expect, 1e-9);
}

TEST(Loss, PadContentIgnoredAndZeroLengthRejected) {
  Rng rng(3);
  auto p = random_volume(rng, 4, 1, 2, 2);
  const auto y = random_volume(rng, 4, 1, 2, 2);
  const std::vector<bool> pad{false, false, true, true};
  const double a = sequence_l1_loss(p, y, 1, pad);
  for (std::size_t i = 0; i < p.frame_size(); ++i) p.frame(3)[i] = 100.0f;
  EXPECT_EQ(sequence_l1_loss(p, y, 1, pad), a);
  EXPECT_GE(a, 0.0);
  EXPECT_THROW(sequence_l1_loss(p, y, 2, pad), std::invalid_argument);
}

TEST(Schedule, HalvingEpochs) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(lr_at(0, c), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(49, c), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(50, c), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(120, c), 5e-5);
  EXPECT_THROW(lr_at(-1, c), std::invalid_argument);
}

TEST(TrainConfig, ValidateRejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.learning_rate = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.window = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

SampleRecord augmentable(Rng& rng, int h, int w) {
  return testing::random_record(rng, {3, 2, h, w}, 0.6, "aug");
}

TEST(Augmentation, RotationGroup) {
  Rng rng(4);
  const SampleRecord r = augmentable(rng, 5, 5);
  const SampleRecord r90 = apply_augmentation(r, {1, false, false});
  EXPECT_EQ(apply_augmentation(r90, {1, false, false}), apply_augmentation(r, {2, false, false}));
  EXPECT_EQ(apply_augmentation(apply_augmentation(r, {2, false, false}), {2, false, false}), r);
  EXPECT_EQ(apply_augmentation(apply_augmentation(r, {3, false, false}), {1, false, false}), r);
  EXPECT_EQ(apply_augmentation(apply_augmentation(r, {0, true, true}), {0, true, true}), r);
  // Counter-clockwise: the top-right pixel moves to the top-left.
  EXPECT_EQ(r90.image(0, 0, 0, 0), r.image(0, 0, 0, 4));
  EXPECT_EQ(r90.valid(1, 4, 0), r.valid(1, 0, 0));
}

TEST(Augmentation, PreservesHistogramAndMaskCount) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const SampleRecord r = augmentable(rng, 4, 4);
    const SampleRecord a = apply_augmentation(r, sample_augmentation(r, rng));
    auto va = a.images, vr = r.images;
    std::sort(va.begin(), va.end());
    std::sort(vr.begin(), vr.end());
    EXPECT_EQ(va, vr);
    for (int t = 0; t < r.frames(); ++t) {
      double ca = 0, cr = 0;
      for (std::size_t p = 0; p < r.shape.frame_pixels(); ++p) {
        ca += a.mask[t * r.shape.frame_pixels() + p];
        cr += r.mask[t * r.shape.frame_pixels() + p];
      }
      EXPECT_EQ(ca, cr);
    }
    EXPECT_EQ(a.days, r.days);
  }
}

TEST(Augmentation, RotationFrequencies) {
  Rng rng(6);
  Rng data(7);
  const SampleRecord r = augmentable(data, 4, 4);
  int counts[4] = {0, 0, 0, 0};
  int fx = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const Augmentation a = sample_augmentation(r, rng);
    ++counts[a.quarter_turns];
    fx += a.flip_x ? 1 : 0;
  }
  for (int c : counts) EXPECT_NEAR(static_cast<double>(c) / n, 0.25, 0.02);
  EXPECT_NEAR(static_cast<double>(fx) / n, 0.5, 0.02);
}

TEST(Augmentation, NonSquareFrames) {
  Rng rng(8);
  const SampleRecord r = augmentable(rng, 3, 5);
  EXPECT_THROW(apply_augmentation(r, {1, false, false}), std::invalid_argument);
  EXPECT_THROW(apply_augmentation(r, {3, false, false}), std::invalid_argument);
  EXPECT_NO_THROW(apply_augmentation(r, {2, true, false}));
  for (int i = 0; i < 200; ++i) EXPECT_EQ(sample_augmentation(r, rng).quarter_turns % 2, 0);
}

// Tiny training setup shared by the optimizer tests.
struct TinyRun {
  ModelConfig model;
  TrainConfig train;
  std::vector<SampleRecord> data;
  std::vector<SampleRecord> val;
  MaskPool pool;

  explicit TinyRun(int n_train = 4, int frames = 4) {
    model = testing::tiny_config();
    model.filters = 4;
    model.bottleneck_depth = 8;
    model.norm_groups = 2;
    model.levels = 2;
    model.positional_encoding = PositionalEncodingMode::kDayInSequence;
    train.window = frames;
    train.batch_size = 2;
    train.max_epochs = 4;
    train.seed = 42;
    SyntheticSceneParams p;
    p.frames = frames + 2;
    p.channels = 2;
    p.height = p.width = 8;
    Rng rng(123);
    for (int i = 0; i < n_train; ++i) data.push_back(generate_synthetic_scene(p, rng, "tr" + std::to_string(i)));
    for (int i = 0; i < 2; ++i) val.push_back(generate_synthetic_scene(p, rng, "va" + std::to_string(i)));
    pool = make_blob_pool(8, 8, 10, 0.2, 0.6, 0.2, rng);
  }
};

TEST(TrainEpoch, ZeroLearningRateLeavesWeightsUnchanged) {
  TinyRun s;
  s.train.learning_rate = 0.0;
  UTilise<float> m(s.model);
  Rng init(1);
  m.initialize(init);
  const ModelWeights before = m.export_weights();
  TrainState state;
  state.seed = 5;
  const EpochResult r = train_epoch(state, m, s.data, s.pool, s.train);
  EXPECT_EQ(m.export_weights(), before);
  EXPECT_EQ(r.batches, 2);
  EXPECT_EQ(state.epoch, 1);
  EXPECT_GT(r.train_loss, 0.0);
}

TEST(TrainEpoch, DeterministicGivenSeed) {
  TinyRun s;
  auto run = [&] {
    UTilise<float> m(s.model);
    Rng init(1);
    m.initialize(init);
    TrainState state;
    state.seed = 9;
    std::vector<double> losses;
    for (int e = 0; e < 3; ++e) losses.push_back(train_epoch(state, m, s.data, s.pool, s.train).train_loss);
    return std::make_pair(losses, m.export_weights());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainEpoch, NonFiniteLossNamesSample) {
  TinyRun s;
  for (int t = 0; t < s.data[1].frames(); ++t) s.data[1].image(t, 0, 0, 0) = std::numeric_limits<float>::quiet_NaN();
  UTilise<float> m(s.model);
  Rng init(1);
  m.initialize(init);
  TrainState state;
  try {
    for (int e = 0; e < 2; ++e) train_epoch(state, m, s.data, s.pool, s.train);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("tr1"), std::string::npos) << e.what();
  }
}

TEST(TrainEpoch, OverfitsSingleSample) {
  TinyRun s(1, 3);
  s.model.filters = 16;
  s.model.bottleneck_depth = 16;
  s.train.batch_size = 1;
  s.train.learning_rate = 3e-3;
  s.train.halving_period = 150;
  s.train.augment = false;
  s.data[0] = s.data[0].slice_frames(0, 3);
  UTilise<float> m(s.model);
  Rng init(2);
  m.initialize(init);
  TrainState state;
  state.seed = 1;
  double last = 1.0;
  for (int e = 0; e < 500; ++e) last = train_epoch(state, m, s.data, s.pool, s.train).train_loss;
  EXPECT_LT(last, 0.005);
}

TEST(Fit, RejectsEmptyAndOverlappingSplits) {
  TinyRun s;
  EXPECT_THROW(fit({}, s.val, s.pool, s.model, s.train), TrainingError);
  EXPECT_THROW(fit(s.data, {}, s.pool, s.model, s.train), TrainingError);
  auto val = s.val;
  val.push_back(s.data[0]);
  EXPECT_THROW(fit(s.data, val, s.pool, s.model, s.train), TrainingError);
}

TEST(Fit, LogRowsAndPatienceZero) {
  TinyRun s;
  s.train.patience = 0;
  s.train.max_epochs = 6;
  s.train.learning_rate = 1e-12;  // validation loss cannot improve by min_delta after epoch 0
  TempDir dir("fit");
  const FitResult r = fit(s.data, s.val, s.pool, s.model, s.train, {dir.path(), {}, -1, {}});
  EXPECT_EQ(r.stop_reason, "patience");
  ASSERT_EQ(r.log.size(), 2u);
  EXPECT_EQ(r.state.best_epoch, 0);
  const auto rows = read_log(dir.path() / "train_log.csv");
  ASSERT_EQ(rows.size(), 2u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].epoch, static_cast<int>(i));
    EXPECT_EQ(rows[i].train_loss, r.log[i].train_loss);
    EXPECT_EQ(rows[i].val_loss, r.log[i].val_loss);
    EXPECT_EQ(rows[i].lr, 1e-12);
  }
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "best.ckpt"));
  EXPECT_EQ(load_weights(dir.path() / "best.ckpt"), r.best_weights);
  std::ifstream f(dir.path() / "train_log.csv");
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, log_header());
}

TEST(Fit, MaxEpochs) {
  TinyRun s;
  s.train.max_epochs = 3;
  s.train.patience = 100;
  const FitResult r = fit(s.data, s.val, s.pool, s.model, s.train);
  EXPECT_EQ(r.stop_reason, "max_epochs");
  EXPECT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.state.epoch, 3);
}

TEST(Fit, ResumeReproducesUninterruptedRun) {
  TinyRun s;
  s.train.max_epochs = 4;
  s.train.patience = 100;
  s.train.learning_rate = 1e-3;
  s.train.halving_period = 2;
  TempDir a("full"), b("resumed");
  const FitResult full = fit(s.data, s.val, s.pool, s.model, s.train, {a.path(), {}, -1, {}});
  const FitResult part = fit(s.data, s.val, s.pool, s.model, s.train, {b.path(), {}, 2, {}});
  EXPECT_EQ(part.stop_reason, "stopped");
  ASSERT_EQ(part.log.size(), 2u);
  const FitResult rest =
      fit(s.data, s.val, s.pool, s.model, s.train, {b.path(), b.path() / "state.ckpt", -1, {}});
  EXPECT_EQ(rest.final_weights, full.final_weights);
  EXPECT_EQ(rest.best_weights, full.best_weights);
  const auto la = read_log(a.path() / "train_log.csv");
  const auto lb = read_log(b.path() / "train_log.csv");
  ASSERT_EQ(la.size(), lb.size());
  for (std::size_t i = 0; i < la.size(); ++i) {
    EXPECT_EQ(la[i].epoch, lb[i].epoch);
    EXPECT_EQ(la[i].train_loss, lb[i].train_loss);
    EXPECT_EQ(la[i].val_loss, lb[i].val_loss);
    EXPECT_EQ(la[i].lr, lb[i].lr);
  }
  TrainConfig other = s.train;
  other.seed = 43;
  EXPECT_THROW(fit(s.data, s.val, s.pool, s.model, other, {b.path(), b.path() / "state.ckpt", -1, {}}), TrainingError);
  ModelConfig no_pe = s.model;
  no_pe.positional_encoding = PositionalEncodingMode::kNone;
  EXPECT_THROW(fit(s.data, s.val, s.pool, no_pe, s.train, {b.path(), b.path() / "state.ckpt", -1, {}}), TrainingError);
}

TEST(TrainState, SerializationRoundTrip) {
  TinyRun s;
  UTilise<float> m(s.model);
  Rng init(3);
  m.initialize(init);
  TrainState state;
  state.seed = 0xFFFFFFFFFFFFFFF1ull;
  train_epoch(state, m, s.data, s.pool, s.train);
  state.best_weights = m.export_weights();
  state.best_val_loss = 0.125;
  TempDir dir("state");
  save_train_state(state, m.export_weights(), dir.path() / "s.ckpt");
  const auto [back, weights] = load_train_state(dir.path() / "s.ckpt");
  EXPECT_EQ(weights, m.export_weights());
  EXPECT_EQ(back.epoch, state.epoch);
  EXPECT_EQ(back.step, state.step);
  EXPECT_EQ(back.seed, state.seed);
  EXPECT_EQ(back.best_val_loss, 0.125);
  EXPECT_EQ(back.adam_m, state.adam_m);
  EXPECT_EQ(back.adam_v, state.adam_v);
  ASSERT_TRUE(back.best_weights.has_value());
  EXPECT_EQ(*back.best_weights, *state.best_weights);
  EXPECT_THROW(load_weights(dir.path() / "s.ckpt"), CheckpointError);
}

TEST(TrainingPair, FixedLengthAndDeterministic) {
  TinyRun s;
  s.train.window = 10;
  Rng a(1), b(1);
  const TrainingPair p = make_training_pair(s.data[0], s.pool, s.train, a);
  const TrainingPair q = make_training_pair(s.data[0], s.pool, s.train, b);
  EXPECT_EQ(p.input, q.input);
  EXPECT_EQ(p.input.frames(), 10);
  EXPECT_EQ(std::count(p.is_pad.begin(), p.is_pad.end(), true), 4);
  double masked = 0;
  for (float v : p.input.mask) masked += 1.0 - v;
  EXPECT_GT(masked, 0.0);
  // Targets stay clean on real frames; pad frames carry an all-zero mask.
  const std::size_t plane = p.target.shape.frame_pixels();
  for (int t = 0; t < 10; ++t) {
    for (std::size_t i = 0; i < plane; ++i) EXPECT_EQ(p.target.mask[t * plane + i], p.is_pad[t] ? 0.0f : 1.0f);
  }
}

}  // namespace
}  // namespace utilise
