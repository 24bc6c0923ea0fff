#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "utilise/datamodel.hpp"

namespace utilise {

// On-disk sample container: one directory per sample holding
//   meta.json    shapes, days, channel roles, sample id, payload checksums
//   images.f32   little-endian float32, row-major T x C x H x W
//   mask.u8      uint8 (0/1), row-major T x 1 x H x W
// A dataset root holds manifest.json plus one container directory per id.

class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};
class ShapeMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

inline constexpr int kContainerVersion = 1;
inline constexpr const char* kMetaFile = "meta.json";
inline constexpr const char* kImagesFile = "images.f32";
inline constexpr const char* kMaskFile = "mask.u8";
inline constexpr const char* kManifestFile = "manifest.json";

// CRC-32 (zlib polynomial) of a byte span.
std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

// Writes `record` into directory `dir` (created if absent). Throws
// ValidationError if the record fails validate_sample.
void save_sample(const SampleRecord& record, const std::filesystem::path& dir);
SampleRecord load_sample(const std::filesystem::path& dir);

void save_manifest(const DatasetManifest& manifest);
DatasetManifest load_manifest(const std::filesystem::path& root);

// Loads every listed sample; errors name the offending sample id.
std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest);

// Writes each record as root/<sample_id> and a manifest listing them.
DatasetManifest save_dataset(const std::vector<SampleRecord>& records,
                             const std::filesystem::path& root, Split split);

// Raw little-endian I/O helpers shared with the checkpoint format.
std::vector<std::uint8_t> encode_f32_le(std::span<const float> values);
std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace utilise
