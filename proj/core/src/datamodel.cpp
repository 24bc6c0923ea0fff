#include "utilise/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace utilise {

const char* to_string(ChannelRole role) {
  return role == ChannelRole::kReconstruct ? "reconstruct" : "auxiliary";
}

ChannelRole channel_role_from_string(const std::string& name) {
  if (name == "reconstruct") return ChannelRole::kReconstruct;
  if (name == "auxiliary") return ChannelRole::kAuxiliary;
  throw DataError("unknown channel role '" + name + "'");
}

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("unknown split '" + name + "'");
}

std::vector<int> SampleRecord::reconstruct_channels() const {
  std::vector<int> out;
  for (int c = 0; c < static_cast<int>(channel_roles.size()); ++c) {
    if (channel_roles[static_cast<std::size_t>(c)] == ChannelRole::kReconstruct) out.push_back(c);
  }
  return out;
}

SampleRecord SampleRecord::make(std::string id, Shape4 shape, std::vector<int> days,
                                std::vector<ChannelRole> roles) {
  SampleRecord r;
  r.sample_id = std::move(id);
  r.shape = shape;
  r.images.assign(shape.volume(), 0.0f);
  r.mask.assign(static_cast<std::size_t>(shape.frames) * shape.frame_pixels(), 1.0f);
  r.days = std::move(days);
  if (roles.empty()) roles.assign(static_cast<std::size_t>(shape.channels), ChannelRole::kReconstruct);
  r.channel_roles = std::move(roles);
  return r;
}

SampleRecord SampleRecord::slice_frames(int begin, int end) const {
  std::vector<int> frames;
  for (int t = begin; t < end; ++t) frames.push_back(t);
  return select_frames(frames);
}

SampleRecord SampleRecord::select_frames(std::span<const int> frames) const {
  SampleRecord out;
  out.sample_id = sample_id;
  out.shape = shape;
  out.shape.frames = static_cast<int>(frames.size());
  out.channel_roles = channel_roles;
  out.metadata = metadata;
  const std::size_t image_stride = static_cast<std::size_t>(shape.channels) * shape.frame_pixels();
  const std::size_t mask_stride = shape.frame_pixels();
  out.images.reserve(frames.size() * image_stride);
  out.mask.reserve(frames.size() * mask_stride);
  for (int t : frames) {
    if (t < 0 || t >= shape.frames) throw DataError("select_frames: frame index out of range");
    const auto ts = static_cast<std::size_t>(t);
    out.images.insert(out.images.end(), images.begin() + static_cast<std::ptrdiff_t>(ts * image_stride),
                      images.begin() + static_cast<std::ptrdiff_t>((ts + 1) * image_stride));
    out.mask.insert(out.mask.end(), mask.begin() + static_cast<std::ptrdiff_t>(ts * mask_stride),
                    mask.begin() + static_cast<std::ptrdiff_t>((ts + 1) * mask_stride));
    out.days.push_back(days[ts]);
  }
  return out;
}

ValidationReport validate_sample(const SampleRecord& record) {
  ValidationReport report;
  report.sample_id = record.sample_id;
  auto& v = report.violations;
  const Shape4& s = record.shape;

  if (s.frames < 1 || s.channels < 1 || s.height < 1 || s.width < 1) {
    v.push_back("shape has a non-positive dimension");
  }
  if (record.images.size() != s.volume()) v.push_back("images size does not match shape");
  if (record.mask.size() != static_cast<std::size_t>(std::max(s.frames, 0)) * s.frame_pixels()) {
    v.push_back("mask size does not match shape");
  }

  bool finite = true;
  bool in_range = true;
  for (float value : record.images) {
    if (!std::isfinite(value)) {
      finite = false;
    } else if (value < 0.0f || value > 1.0f) {
      in_range = false;
    }
  }
  if (!finite) v.push_back("images contain undefined values");
  if (!in_range) v.push_back("images outside [0,1]");

  if (!std::all_of(record.mask.begin(), record.mask.end(),
                   [](float m) { return m == 0.0f || m == 1.0f; })) {
    v.push_back("mask not binary");
  }

  if (record.days.size() != static_cast<std::size_t>(std::max(s.frames, 0))) {
    v.push_back("days length does not match frame count");
  }
  for (std::size_t i = 1; i < record.days.size(); ++i) {
    if (record.days[i] <= record.days[i - 1]) {
      v.push_back("days not strictly increasing");
      break;
    }
  }
  if (!std::all_of(record.days.begin(), record.days.end(), [](int d) { return d >= 1 && d <= 366; })) {
    v.push_back("days outside [1,366]");
  }

  if (record.channel_roles.size() != static_cast<std::size_t>(std::max(s.channels, 0))) {
    v.push_back("channel_roles count does not match channels");
  }
  if (std::none_of(record.channel_roles.begin(), record.channel_roles.end(),
                   [](ChannelRole r) { return r == ChannelRole::kReconstruct; })) {
    v.push_back("no reconstruct channel");
  }

  report.pass = v.empty();
  return report;
}

Reflectance normalize_reflectance(const SensorValues& raw) {
  Reflectance out;
  out.values.resize(raw.values.size());
  for (std::size_t i = 0; i < raw.values.size(); ++i) {
    const float value = raw.values[i];
    if (!std::isfinite(value)) {
      throw ValidationError("normalize_reflectance: non-finite value at index " + std::to_string(i));
    }
    const double clipped = std::clamp(static_cast<double>(value), 0.0, kReflectanceScale);
    out.values[i] = static_cast<float>(clipped / kReflectanceScale);
  }
  return out;
}

Reflectance normalize_reflectance(const Reflectance& normalized) { return normalized; }

}  // namespace utilise
