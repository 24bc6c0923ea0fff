#include "utilise/gapsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "utilise/container.hpp"

namespace utilise {

std::size_t OcclusionMask::occluded_count() const {
  return static_cast<std::size_t>(std::count(occluded.begin(), occluded.end(), std::uint8_t{1}));
}

double OcclusionMask::coverage() const {
  return occluded.empty() ? 0.0 : static_cast<double>(occluded_count()) / occluded.size();
}

OcclusionMask OcclusionMask::full(int height, int width) {
  return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 1)};
}

OcclusionMask OcclusionMask::empty(int height, int width) {
  return {height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
}

void MaskPool::add(OcclusionMask mask, std::string source) {
  if (!masks.empty() && (mask.height != masks.front().height || mask.width != masks.front().width)) {
    throw ShapeMismatchError("mask pool: spatial size differs from pool");
  }
  for (std::uint8_t v : mask.occluded) {
    if (v > 1) throw ValidationError("mask pool: mask not binary");
  }
  masks.push_back(std::move(mask));
  sources.push_back(std::move(source));
}

MaskPool load_mask_pool(const std::filesystem::path& root) {
  MaskPool pool;
  const DatasetManifest manifest = load_manifest(root);
  for (const SampleRecord& r : load_dataset(manifest)) {
    const std::size_t pixels = r.shape.frame_pixels();
    for (int t = 0; t < r.frames(); ++t) {
      OcclusionMask m = OcclusionMask::empty(r.height(), r.width());
      for (std::size_t p = 0; p < pixels; ++p) {
        m.occluded[p] = r.mask[static_cast<std::size_t>(t) * pixels + p] == 0.0f ? 1 : 0;
      }
      if (m.occluded_count() == 0) continue;
      pool.add(std::move(m), r.sample_id + "#" + std::to_string(t));
    }
  }
  return pool;
}

void GapSpec::validate() const {
  if (!(max_masked_frame_ratio > 0.0 && max_masked_frame_ratio <= 1.0)) {
    throw std::invalid_argument("max_masked_frame_ratio must be in (0, 1]");
  }
  if (min_masked_frames < 1) throw std::invalid_argument("min_masked_frames must be >= 1");
}

std::pair<int, int> masked_frame_bounds(const GapSpec& spec, int frames) {
  const int lo = std::max(1, spec.min_masked_frames);
  const int ratio_cap = static_cast<int>(std::floor(spec.max_masked_frame_ratio * frames + 1e-9));
  // The minimum dominates when ratio * T falls below it.
  int hi = std::max(spec.min_masked_frames, ratio_cap);
  hi = std::min(hi, frames);
  return {std::min(lo, frames), hi};
}

GapPattern sample_gap_pattern(const GapSpec& spec, const MaskPool& pool, int frames, Rng& rng) {
  spec.validate();
  if (pool.empty()) throw std::invalid_argument("sample_gap_pattern: mask pool is empty");
  if (frames < 1) throw std::invalid_argument("sample_gap_pattern: sequence has no frames");
  const auto [lo, hi] = masked_frame_bounds(spec, frames);
  const int count = rng.uniform_int(lo, hi);
  GapPattern pattern;
  pattern.frames = rng.sample_without_replacement(frames, count);
  for (int i = 0; i < count; ++i) {
    pattern.mask_indices.push_back(rng.uniform_int(0, static_cast<int>(pool.masks.size()) - 1));
  }
  return pattern;
}

std::vector<FrameGap> materialize(const GapPattern& pattern, const MaskPool& pool) {
  std::vector<FrameGap> gaps;
  gaps.reserve(pattern.frames.size());
  for (std::size_t i = 0; i < pattern.frames.size(); ++i) {
    gaps.push_back({pattern.frames[i], pool.masks.at(static_cast<std::size_t>(pattern.mask_indices[i]))});
  }
  return gaps;
}

SampleRecord imprint(const SampleRecord& record, std::span<const FrameGap> gaps) {
  SampleRecord out = record;
  const std::vector<int> channels = record.reconstruct_channels();
  const std::size_t pixels = record.shape.frame_pixels();
  for (const FrameGap& gap : gaps) {
    if (gap.frame < 0 || gap.frame >= record.frames()) {
      throw ShapeMismatchError("imprint: gap frame out of range");
    }
    if (gap.mask.height != record.height() || gap.mask.width != record.width() ||
        gap.mask.occluded.size() != pixels) {
      throw ShapeMismatchError("imprint: gap mask size does not match the record");
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      if (gap.mask.occluded[p] == 0) continue;
      out.mask[static_cast<std::size_t>(gap.frame) * pixels + p] = 0.0f;
      for (int c : channels) {
        out.images[(static_cast<std::size_t>(gap.frame) * record.channels() + c) * pixels + p] = 1.0f;
      }
    }
  }
  return out;
}

FilterOutcome filter_cloudy_frames(const SampleRecord& record, std::span<const float> cloud_score,
                                   double threshold) {
  const std::size_t pixels = record.shape.frame_pixels();
  if (cloud_score.size() != static_cast<std::size_t>(record.frames()) * pixels) {
    throw ShapeMismatchError("filter_cloudy_frames: cloud score does not match the record shape");
  }
  FilterOutcome outcome;
  for (int t = 0; t < record.frames(); ++t) {
    bool clean = true;
    for (std::size_t p = 0; p < pixels && clean; ++p) {
      const std::size_t i = static_cast<std::size_t>(t) * pixels + p;
      if (cloud_score[i] > threshold || record.mask[i] == 0.0f) clean = false;
    }
    if (clean) outcome.kept_frames.push_back(t);
  }
  if (static_cast<int>(outcome.kept_frames.size()) < kMinSequenceLength) {
    outcome.rejection_reason = "too short";
    return outcome;
  }
  outcome.record = record.select_frames(outcome.kept_frames);
  return outcome;
}

int median_day_spacing(std::span<const int> days) {
  if (days.size() < 2) return 5;
  std::vector<int> gaps;
  for (std::size_t i = 1; i < days.size(); ++i) gaps.push_back(days[i] - days[i - 1]);
  std::sort(gaps.begin(), gaps.end());
  const std::size_t mid = gaps.size() / 2;
  const double median =
      gaps.size() % 2 == 1 ? gaps[mid] : 0.5 * (gaps[mid - 1] + gaps[mid]);
  return std::max(1, static_cast<int>(std::lround(median)));
}

TrimResult trim_or_pad(const SampleRecord& record, int length, Rng& rng, TrimMode mode) {
  if (length < 1) throw std::invalid_argument("trim_or_pad: target length must be >= 1");
  const int frames = record.frames();
  if (frames < 1) throw std::invalid_argument("trim_or_pad: empty input sequence");

  TrimResult result;
  result.original_length = frames;
  if (frames > length) {
    if (mode == TrimMode::kEval) {
      throw std::invalid_argument("trim_or_pad: eval mode does not crop; use sliding-window inference");
    }
    const int start = rng.uniform_int(0, frames - length);
    result.record = record.slice_frames(start, start + length);
    result.window_start = start;
    result.valid_length = length;
    result.is_pad.assign(static_cast<std::size_t>(length), false);
    return result;
  }

  result.record = record;
  result.valid_length = frames;
  result.is_pad.assign(static_cast<std::size_t>(frames), false);
  if (frames == length) return result;

  SampleRecord& r = result.record;
  const int spacing = median_day_spacing(record.days);
  const int pad = length - frames;
  r.shape.frames = length;
  r.images.resize(r.shape.volume(), 1.0f);
  r.mask.resize(static_cast<std::size_t>(length) * r.shape.frame_pixels(), 0.0f);
  for (int k = 1; k <= pad; ++k) r.days.push_back(record.days.back() + k * spacing);
  result.is_pad.resize(static_cast<std::size_t>(length), true);
  return result;
}

}  // namespace utilise
