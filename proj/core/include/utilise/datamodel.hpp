#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace utilise {

// Base class for every data-layer failure (I/O, format, validation).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input contained a non-finite value or otherwise violated a value contract.
class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

enum class ChannelRole { kReconstruct, kAuxiliary };

const char* to_string(ChannelRole role);
ChannelRole channel_role_from_string(const std::string& name);

// Dimensions of a T x C x H x W sequence volume.
struct Shape4 {
  int frames = 0;
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t frame_pixels() const { return static_cast<std::size_t>(height) * width; }
  std::size_t volume() const {
    return static_cast<std::size_t>(frames) * channels * frame_pixels();
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// One co-registered image sequence of a single location.
//
// `images` is row-major T x C x H x W with reflectance in [0, 1]; `mask` is
// row-major T x 1 x H x W with 1 = valid observation and 0 = missing. Missing
// pixels of reconstruct channels carry the imprint value 1.0, never NaN.
// `days` holds the day-of-year of each acquisition and is strictly increasing.
struct SampleRecord {
  std::string sample_id;
  Shape4 shape;
  std::vector<float> images;
  std::vector<float> mask;
  std::vector<int> days;
  std::vector<ChannelRole> channel_roles;
  // Free-form string annotations carried through the container (provenance).
  std::map<std::string, std::string> metadata;

  int frames() const { return shape.frames; }
  int channels() const { return shape.channels; }
  int height() const { return shape.height; }
  int width() const { return shape.width; }

  std::size_t image_index(int t, int c, int y, int x) const {
    return ((static_cast<std::size_t>(t) * shape.channels + c) * shape.height + y) * shape.width + x;
  }
  std::size_t mask_index(int t, int y, int x) const {
    return (static_cast<std::size_t>(t) * shape.height + y) * shape.width + x;
  }
  float& image(int t, int c, int y, int x) { return images[image_index(t, c, y, x)]; }
  float image(int t, int c, int y, int x) const { return images[image_index(t, c, y, x)]; }
  float& valid(int t, int y, int x) { return mask[mask_index(t, y, x)]; }
  float valid(int t, int y, int x) const { return mask[mask_index(t, y, x)]; }

  // Indices of channels tagged reconstruct, in channel order.
  std::vector<int> reconstruct_channels() const;

  // Allocates a record with all-valid mask and zeroed images.
  static SampleRecord make(std::string id, Shape4 shape, std::vector<int> days,
                           std::vector<ChannelRole> roles = {});

  // Copies frames [begin, end) into a new record.
  SampleRecord slice_frames(int begin, int end) const;
  // Copies the listed frames (in the given order) into a new record.
  SampleRecord select_frames(std::span<const int> frames) const;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct ValidationReport {
  std::string sample_id;
  std::vector<std::string> violations;
  bool pass = true;
};

// Checks every SampleRecord invariant and lists each violation found.
ValidationReport validate_sample(const SampleRecord& record);

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split split);
Split split_from_string(const std::string& name);

struct DatasetManifest {
  std::string root;
  std::vector<std::string> sample_ids;
  Split split = Split::kTrain;
  int channels = 0;
  int height = 0;
  int width = 0;
};

// Reflectance scale of the sensor (digital numbers per unit reflectance).
inline constexpr double kReflectanceScale = 10000.0;

// Raw sensor values (digital numbers) as delivered by the source archive.
struct SensorValues {
  std::vector<float> values;
};

// Values already mapped to unit reflectance range.
struct Reflectance {
  std::vector<float> values;
  friend bool operator==(const Reflectance&, const Reflectance&) = default;
};

// Clips raw sensor values to [0, 10000] and maps them to [0, 1]. Throws
// ValidationError naming the first non-finite element.
Reflectance normalize_reflectance(const SensorValues& raw);
// Already-normalized input passes through unchanged.
Reflectance normalize_reflectance(const Reflectance& normalized);

}  // namespace utilise
