#include "utilise/container.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace utilise {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex32(std::uint32_t value) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", value);
  return buf;
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": malformed JSON (" + e.what() + ")");
  }
}

template <typename T>
T require(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw FormatError(where.string() + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where.string() + ": key '" + key + "' has the wrong type");
  }
}

}  // namespace

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes a uInt length; feed in chunks for very large payloads.
  std::size_t offset = 0;
  while (offset < bytes.size()) {
    const std::size_t chunk = std::min<std::size_t>(bytes.size() - offset, 1u << 30);
    crc = ::crc32(crc, bytes.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> encode_f32_le(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(values[i]);
    out[4 * i + 0] = static_cast<std::uint8_t>(bits);
    out[4 * i + 1] = static_cast<std::uint8_t>(bits >> 8);
    out[4 * i + 2] = static_cast<std::uint8_t>(bits >> 16);
    out[4 * i + 3] = static_cast<std::uint8_t>(bits >> 24);
  }
  return out;
}

std::vector<float> decode_f32_le(std::span<const std::uint8_t> bytes) {
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::uint32_t bits = static_cast<std::uint32_t>(bytes[4 * i]) |
                               static_cast<std::uint32_t>(bytes[4 * i + 1]) << 8 |
                               static_cast<std::uint32_t>(bytes[4 * i + 2]) << 16 |
                               static_cast<std::uint32_t>(bytes[4 * i + 3]) << 24;
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw DataError("failed reading " + path.string());
  return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("failed writing " + path.string());
}

void save_sample(const SampleRecord& record, const fs::path& dir) {
  const ValidationReport report = validate_sample(record);
  if (!report.pass) {
    throw ValidationError("save_sample(" + record.sample_id + "): " + report.violations.front());
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());

  const std::vector<std::uint8_t> image_bytes = encode_f32_le(record.images);
  std::vector<std::uint8_t> mask_bytes(record.mask.size());
  for (std::size_t i = 0; i < record.mask.size(); ++i) {
    mask_bytes[i] = record.mask[i] != 0.0f ? 1 : 0;
  }

  json meta;
  meta["format"] = "utilise-sample";
  meta["version"] = kContainerVersion;
  meta["sample_id"] = record.sample_id;
  meta["shape"] = {record.frames(), record.channels(), record.height(), record.width()};
  meta["days"] = record.days;
  json roles = json::array();
  for (ChannelRole r : record.channel_roles) roles.push_back(to_string(r));
  meta["channel_roles"] = roles;
  meta["checksums"] = {{"images", hex32(crc32_of(image_bytes))},
                       {"mask", hex32(crc32_of(mask_bytes))}};
  meta["metadata"] = record.metadata;

  write_file_bytes(dir / kImagesFile, image_bytes);
  write_file_bytes(dir / kMaskFile, mask_bytes);
  write_text_file(dir / kMetaFile, meta.dump(2) + "\n");
}

SampleRecord load_sample(const fs::path& dir) {
  const fs::path meta_path = dir / kMetaFile;
  if (!fs::exists(meta_path)) throw MissingFileError("missing " + meta_path.string());
  const json meta = parse_json_file(meta_path);

  if (require<std::string>(meta, "format", meta_path) != "utilise-sample") {
    throw FormatError(meta_path.string() + ": not a sample container");
  }
  if (require<int>(meta, "version", meta_path) != kContainerVersion) {
    throw FormatError(meta_path.string() + ": unsupported container version");
  }

  SampleRecord r;
  r.sample_id = require<std::string>(meta, "sample_id", meta_path);
  const auto dims = require<std::vector<int>>(meta, "shape", meta_path);
  if (dims.size() != 4) throw FormatError(meta_path.string() + ": shape must have 4 entries");
  r.shape = Shape4{dims[0], dims[1], dims[2], dims[3]};
  if (r.shape.frames < 1 || r.shape.channels < 1 || r.shape.height < 1 || r.shape.width < 1) {
    throw FormatError(meta_path.string() + ": non-positive shape");
  }
  r.days = require<std::vector<int>>(meta, "days", meta_path);
  if (r.days.size() != static_cast<std::size_t>(r.shape.frames)) {
    throw ShapeMismatchError(meta_path.string() + ": days length does not match frame count");
  }
  for (const auto& name : require<std::vector<std::string>>(meta, "channel_roles", meta_path)) {
    r.channel_roles.push_back(channel_role_from_string(name));
  }
  if (r.channel_roles.size() != static_cast<std::size_t>(r.shape.channels)) {
    throw ShapeMismatchError(meta_path.string() + ": channel_roles count does not match channels");
  }
  if (meta.contains("metadata")) {
    r.metadata = meta.at("metadata").get<std::map<std::string, std::string>>();
  }
  const json checksums = require<json>(meta, "checksums", meta_path);

  const fs::path images_path = dir / kImagesFile;
  const fs::path mask_path = dir / kMaskFile;
  if (!fs::exists(images_path)) throw MissingFileError("missing " + images_path.string());
  if (!fs::exists(mask_path)) throw MissingFileError("missing " + mask_path.string());
  const std::vector<std::uint8_t> image_bytes = read_file_bytes(images_path);
  const std::vector<std::uint8_t> mask_bytes = read_file_bytes(mask_path);

  const std::size_t expected_images = r.shape.volume() * 4;
  const std::size_t expected_mask = static_cast<std::size_t>(r.shape.frames) * r.shape.frame_pixels();
  if (image_bytes.size() != expected_images) {
    throw ShapeMismatchError(images_path.string() + ": expected " + std::to_string(expected_images) +
                             " bytes, found " + std::to_string(image_bytes.size()));
  }
  if (mask_bytes.size() != expected_mask) {
    throw ShapeMismatchError(mask_path.string() + ": expected " + std::to_string(expected_mask) +
                             " bytes, found " + std::to_string(mask_bytes.size()));
  }
  if (require<std::string>(checksums, "images", meta_path) != hex32(crc32_of(image_bytes))) {
    throw ChecksumError(images_path.string() + ": checksum mismatch");
  }
  if (require<std::string>(checksums, "mask", meta_path) != hex32(crc32_of(mask_bytes))) {
    throw ChecksumError(mask_path.string() + ": checksum mismatch");
  }

  r.images = decode_f32_le(image_bytes);
  r.mask.resize(mask_bytes.size());
  for (std::size_t i = 0; i < mask_bytes.size(); ++i) r.mask[i] = static_cast<float>(mask_bytes[i]);
  return r;
}

void save_manifest(const DatasetManifest& manifest) {
  json j;
  j["format"] = "utilise-manifest";
  j["version"] = kContainerVersion;
  j["split"] = to_string(manifest.split);
  j["channels"] = manifest.channels;
  j["height"] = manifest.height;
  j["width"] = manifest.width;
  j["sample_ids"] = manifest.sample_ids;
  std::error_code ec;
  fs::create_directories(manifest.root, ec);
  if (ec) throw DataError("cannot create " + manifest.root + ": " + ec.message());
  write_text_file(fs::path(manifest.root) / kManifestFile, j.dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& root) {
  const fs::path path = root / kManifestFile;
  if (!fs::exists(path)) throw MissingFileError("missing " + path.string());
  const json j = parse_json_file(path);
  if (require<std::string>(j, "format", path) != "utilise-manifest") {
    throw FormatError(path.string() + ": not a dataset manifest");
  }
  DatasetManifest m;
  m.root = root.string();
  m.split = split_from_string(require<std::string>(j, "split", path));
  m.channels = require<int>(j, "channels", path);
  m.height = require<int>(j, "height", path);
  m.width = require<int>(j, "width", path);
  m.sample_ids = require<std::vector<std::string>>(j, "sample_ids", path);
  return m;
}

std::vector<SampleRecord> load_dataset(const DatasetManifest& manifest) {
  std::vector<SampleRecord> out;
  out.reserve(manifest.sample_ids.size());
  for (const std::string& id : manifest.sample_ids) {
    const fs::path dir = fs::path(manifest.root) / id;
    SampleRecord r;
    try {
      r = load_sample(dir);
    } catch (const MissingFileError& e) {
      throw MissingFileError("sample '" + id + "': " + e.what());
    } catch (const ShapeMismatchError& e) {
      throw ShapeMismatchError("sample '" + id + "': " + e.what());
    } catch (const ChecksumError& e) {
      throw ChecksumError("sample '" + id + "': " + e.what());
    } catch (const DataError& e) {
      throw DataError("sample '" + id + "': " + e.what());
    }
    if (r.channels() != manifest.channels || r.height() != manifest.height ||
        r.width() != manifest.width) {
      throw ShapeMismatchError("sample '" + id + "': C/H/W differ from the manifest");
    }
    out.push_back(std::move(r));
  }
  return out;
}

DatasetManifest save_dataset(const std::vector<SampleRecord>& records, const fs::path& root,
                             Split split) {
  DatasetManifest m;
  m.root = root.string();
  m.split = split;
  if (!records.empty()) {
    m.channels = records.front().channels();
    m.height = records.front().height();
    m.width = records.front().width();
  }
  for (const SampleRecord& r : records) {
    if (r.channels() != m.channels || r.height() != m.height || r.width() != m.width) {
      throw ShapeMismatchError("save_dataset: sample '" + r.sample_id + "' differs in C/H/W");
    }
    save_sample(r, root / r.sample_id);
    m.sample_ids.push_back(r.sample_id);
  }
  save_manifest(m);
  return m;
}

}  // namespace utilise
