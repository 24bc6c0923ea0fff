#pragma once

#include <cstdint>
#include <string>

#include "utilise/datamodel.hpp"
#include "utilise/gapsim.hpp"
#include "utilise/rng.hpp"

namespace utilise {

// Procedural land-cover scene: Voronoi segments whose reflectance follows a
// per-segment seasonal sinusoid in day-of-year, with optional abrupt step
// events, additive noise, a per-frame multiplicative brightness jitter and
// an optional static per-pixel texture (off by default).
struct SyntheticSceneParams {
  int segments = 6;
  double seasonal_amplitude = 0.15;    // upper bound of per-segment amplitudes
  double seasonal_period_days = 365.0;
  double event_probability = 0.05;     // per frame, at most one event per segment
  double event_magnitude = 0.2;        // upper bound of |step|
  double texture = 0.0;                // std-dev of an optional static per-pixel texture
  double noise = 0.005;                // std-dev of the per-observation noise
  double brightness_jitter = 0.05;     // factor drawn from [1 - j, 1 + j]
  int min_day_spacing = 5;
  int max_day_spacing = 15;
  int frames = 10;
  int channels = 4;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

SampleRecord generate_synthetic_scene(const SyntheticSceneParams& params, Rng& rng,
                                      const std::string& sample_id = "scene");
SampleRecord generate_synthetic_scene(const SyntheticSceneParams& params);

// Connected irregular blob(s) grown to cover `coverage` of the frame.
// Requires 0 < coverage < 1.
OcclusionMask generate_blob_mask(int height, int width, double coverage, Rng& rng);

// Pool of `count` blob masks with coverage drawn from [min_coverage,
// max_coverage]; a `full_frame_fraction` share of entries are fully occluded
// frames.
MaskPool make_blob_pool(int height, int width, int count, double min_coverage, double max_coverage,
                        double full_frame_fraction, Rng& rng);

}  // namespace utilise
