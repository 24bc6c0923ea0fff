#include "utilise/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace utilise {

void SyntheticSceneParams::validate() const {
  if (segments < 1) throw std::invalid_argument("segments must be >= 1");
  if (seasonal_amplitude < 0.0) throw std::invalid_argument("seasonal_amplitude must be >= 0");
  if (seasonal_period_days <= 0.0) throw std::invalid_argument("seasonal_period_days must be > 0");
  if (event_probability < 0.0 || event_probability > 1.0) {
    throw std::invalid_argument("event_probability must be in [0, 1]");
  }
  if (event_magnitude < 0.0) throw std::invalid_argument("event_magnitude must be >= 0");
  if (texture < 0.0) throw std::invalid_argument("texture must be >= 0");
  if (noise < 0.0) throw std::invalid_argument("noise must be >= 0");
  if (brightness_jitter < 0.0 || brightness_jitter >= 1.0) {
    throw std::invalid_argument("brightness_jitter must be in [0, 1)");
  }
  if (min_day_spacing < 1 || max_day_spacing < min_day_spacing) {
    throw std::invalid_argument("min_day_spacing/max_day_spacing must satisfy 1 <= min <= max");
  }
  if (frames < 1) throw std::invalid_argument("frames must be >= 1");
  if (channels < 1) throw std::invalid_argument("channels must be >= 1");
  if (height < 1 || width < 1) throw std::invalid_argument("height/width must be >= 1");
  if (static_cast<long>(frames - 1) * min_day_spacing > 365) {
    throw std::invalid_argument("frames * min_day_spacing does not fit into one year");
  }
}

SampleRecord generate_synthetic_scene(const SyntheticSceneParams& params, Rng& rng,
                                      const std::string& sample_id) {
  params.validate();
  const int T = params.frames;
  const int C = params.channels;
  const int H = params.height;
  const int W = params.width;

  // Acquisition days: random spacings, shrunk to fit into one calendar year.
  std::vector<int> spacing(static_cast<std::size_t>(std::max(T - 1, 0)));
  int span = 0;
  for (int& s : spacing) {
    s = rng.uniform_int(params.min_day_spacing, params.max_day_spacing);
    span += s;
  }
  while (span > 365) {
    for (int& s : spacing) {
      if (s > params.min_day_spacing && span > 365) {
        --s;
        --span;
      }
    }
  }
  std::vector<int> days(static_cast<std::size_t>(T));
  days[0] = rng.uniform_int(1, 366 - span);
  for (int t = 1; t < T; ++t) days[static_cast<std::size_t>(t)] = days[static_cast<std::size_t>(t - 1)] + spacing[static_cast<std::size_t>(t - 1)];

  // Voronoi segmentation.
  const int K = params.segments;
  std::vector<double> site_y(static_cast<std::size_t>(K)), site_x(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    site_y[static_cast<std::size_t>(k)] = rng.uniform(0.0, H);
    site_x[static_cast<std::size_t>(k)] = rng.uniform(0.0, W);
  }
  std::vector<int> segment(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      int best = 0;
      double best_d = 1e300;
      for (int k = 0; k < K; ++k) {
        const double dy = y + 0.5 - site_y[static_cast<std::size_t>(k)];
        const double dx = x + 0.5 - site_x[static_cast<std::size_t>(k)];
        const double d = dy * dy + dx * dx;
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      segment[static_cast<std::size_t>(y) * W + x] = best;
    }
  }

  // Per-segment temporal profiles.
  const auto idx = [C](int k, int c) { return static_cast<std::size_t>(k) * C + c; };
  std::vector<double> base(static_cast<std::size_t>(K) * C), amplitude(base.size()), step(base.size());
  std::vector<double> phase(static_cast<std::size_t>(K));
  std::vector<int> event_frame(static_cast<std::size_t>(K), T);
  for (int k = 0; k < K; ++k) {
    phase[static_cast<std::size_t>(k)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (int c = 0; c < C; ++c) {
      base[idx(k, c)] = rng.uniform(0.05, 0.45);
      amplitude[idx(k, c)] = rng.uniform(0.0, params.seasonal_amplitude);
      step[idx(k, c)] = rng.uniform(-params.event_magnitude, params.event_magnitude);
    }
    for (int t = 1; t < T; ++t) {
      if (rng.bernoulli(params.event_probability)) {
        event_frame[static_cast<std::size_t>(k)] = t;
        break;
      }
    }
  }

  std::vector<double> texture(static_cast<std::size_t>(C) * H * W);
  for (double& v : texture) v = params.texture * rng.normal();
  std::vector<double> jitter(static_cast<std::size_t>(T));
  for (double& j : jitter) j = rng.uniform(1.0 - params.brightness_jitter, 1.0 + params.brightness_jitter);

  SampleRecord record =
      SampleRecord::make(sample_id, Shape4{T, C, H, W}, std::move(days));
  for (int t = 0; t < T; ++t) {
    const double angle =
        2.0 * std::numbers::pi * record.days[static_cast<std::size_t>(t)] / params.seasonal_period_days;
    for (int c = 0; c < C; ++c) {
      for (int p = 0; p < H * W; ++p) {
        const int k = segment[static_cast<std::size_t>(p)];
        double value = base[idx(k, c)] + amplitude[idx(k, c)] * std::sin(angle + phase[static_cast<std::size_t>(k)]);
        if (t >= event_frame[static_cast<std::size_t>(k)]) value += step[idx(k, c)];
        value += texture[static_cast<std::size_t>(c) * H * W + p];
        value *= jitter[static_cast<std::size_t>(t)];
        if (params.noise > 0.0) value += params.noise * rng.normal();
        record.images[(static_cast<std::size_t>(t) * C + c) * H * W + p] =
            static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return record;
}

SampleRecord generate_synthetic_scene(const SyntheticSceneParams& params) {
  Rng rng(params.seed);
  return generate_synthetic_scene(params, rng);
}

OcclusionMask generate_blob_mask(int height, int width, double coverage, Rng& rng) {
  if (!(coverage > 0.0 && coverage < 1.0)) {
    throw std::invalid_argument("generate_blob_mask: coverage must be in (0, 1)");
  }
  OcclusionMask mask = OcclusionMask::empty(height, width);
  const int total = height * width;
  const int target = std::clamp(static_cast<int>(std::lround(coverage * total)), 1, total - 1);
  const int blobs = rng.uniform_int(1, 3);

  int filled = 0;
  // Extra seeds are only needed when a blob gets enclosed by earlier ones.
  for (int b = 0; filled < target; ++b) {
    const int blob_target = b >= blobs - 1 ? target : filled + (target - filled) / (blobs - b);
    // Eden growth from a random clear seed. Frontier entries may repeat, which
    // favours pixels with many occupied neighbours and keeps blobs compact.
    int seed;
    do {
      seed = rng.uniform_int(0, total - 1);
    } while (mask.occluded[static_cast<std::size_t>(seed)] != 0);
    std::vector<int> frontier{seed};
    while (filled < blob_target && !frontier.empty()) {
      const int pick = rng.uniform_int(0, static_cast<int>(frontier.size()) - 1);
      const int p = frontier[static_cast<std::size_t>(pick)];
      frontier[static_cast<std::size_t>(pick)] = frontier.back();
      frontier.pop_back();
      if (mask.occluded[static_cast<std::size_t>(p)] != 0) continue;
      mask.occluded[static_cast<std::size_t>(p)] = 1;
      ++filled;
      const int y = p / width;
      const int x = p % width;
      if (y > 0) frontier.push_back(p - width);
      if (y + 1 < height) frontier.push_back(p + width);
      if (x > 0) frontier.push_back(p - 1);
      if (x + 1 < width) frontier.push_back(p + 1);
    }
  }
  return mask;
}

MaskPool make_blob_pool(int height, int width, int count, double min_coverage, double max_coverage,
                        double full_frame_fraction, Rng& rng) {
  if (count < 1) throw std::invalid_argument("make_blob_pool: count must be >= 1");
  MaskPool pool;
  for (int i = 0; i < count; ++i) {
    if (rng.bernoulli(full_frame_fraction)) {
      pool.add(OcclusionMask::full(height, width), "full-frame");
    } else {
      const double coverage = rng.uniform(min_coverage, max_coverage);
      pool.add(generate_blob_mask(height, width, coverage, rng), "blob");
    }
  }
  return pool;
}

}  // namespace utilise
