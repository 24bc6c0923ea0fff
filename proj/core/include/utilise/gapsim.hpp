#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "utilise/datamodel.hpp"
#include "utilise/rng.hpp"

namespace utilise {

// Binary occlusion map of one frame: 1 = occluded (gap), 0 = clear.
struct OcclusionMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> occluded;

  std::size_t occluded_count() const;
  double coverage() const;
  static OcclusionMask full(int height, int width);
  static OcclusionMask empty(int height, int width);
  friend bool operator==(const OcclusionMask&, const OcclusionMask&) = default;
};

// Pool of real or generated occlusion masks that gaps are drawn from.
struct MaskPool {
  std::vector<OcclusionMask> masks;
  std::vector<std::string> sources;

  void add(OcclusionMask mask, std::string source);
  bool empty() const { return masks.empty(); }
};

// Builds a pool from the mask payloads of a container dataset. Every frame
// with at least one invalid pixel contributes one occlusion mask (1 - mask).
MaskPool load_mask_pool(const std::filesystem::path& root);

struct GapSpec {
  double max_masked_frame_ratio = 0.5;
  int min_masked_frames = 1;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;
};

// Frames chosen for masking together with the pool index of each frame's mask.
struct GapPattern {
  std::vector<int> frames;
  std::vector<int> mask_indices;
};

struct FrameGap {
  int frame = 0;
  OcclusionMask mask;
};

// Inclusive bounds on the number of masked frames for a sequence of length T.
std::pair<int, int> masked_frame_bounds(const GapSpec& spec, int frames);

GapPattern sample_gap_pattern(const GapSpec& spec, const MaskPool& pool, int frames, Rng& rng);
std::vector<FrameGap> materialize(const GapPattern& pattern, const MaskPool& pool);

// Sets reconstruct channels under each gap to 1.0 and the mask to 0.
// Auxiliary channels are left untouched.
SampleRecord imprint(const SampleRecord& record, std::span<const FrameGap> gaps);

// Cloud filtering ---------------------------------------------------------

inline constexpr double kDefaultCloudThreshold = 0.01;
inline constexpr int kMinSequenceLength = 5;

struct FilterOutcome {
  std::optional<SampleRecord> record;
  std::string rejection_reason;
  std::vector<int> kept_frames;
};

// Keeps only frames without any flagged pixel. A pixel is flagged when its
// cloud score exceeds `threshold` or the record already marks it invalid.
// `cloud_score` is T x 1 x H x W (probabilities or a binary mask).
FilterOutcome filter_cloudy_frames(const SampleRecord& record, std::span<const float> cloud_score,
                                   double threshold = kDefaultCloudThreshold);

// Fixed-length windows ----------------------------------------------------

enum class TrimMode { kTrain, kEval };

struct TrimResult {
  SampleRecord record;
  int original_length = 0;
  int valid_length = 0;   // frames [0, valid_length) are real, the rest padding
  int window_start = 0;   // first source frame of the window
  std::vector<bool> is_pad;
};

// Median spacing of consecutive days (at least 1; nominal 5 for single frames).
int median_day_spacing(std::span<const int> days);

// Crops (train mode) or pads a record to exactly `length` frames. Pad frames
// are appended with all-ones images, zero mask and days extrapolated at the
// median spacing. Eval mode never crops.
TrimResult trim_or_pad(const SampleRecord& record, int length, Rng& rng, TrimMode mode);

}  // namespace utilise
