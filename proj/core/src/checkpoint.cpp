#include "utilise/checkpoint.hpp"

#include <cmath>
#include <cstring>

#include "json.hpp"
#include "utilise/container.hpp"

namespace utilise {
namespace {

using nlohmann::json;

json config_json(const ModelConfig& c) {
  return json{{"input_channels", c.input_channels},
              {"output_channels", c.output_channels},
              {"filters", c.filters},
              {"bottleneck_depth", c.bottleneck_depth},
              {"levels", c.levels},
              {"heads", c.heads},
              {"key_dim", c.key_dim},
              {"norm_groups", c.norm_groups},
              {"mlp_hidden", c.mlp_hidden},
              {"positional_encoding", to_string(c.positional_encoding)},
              {"tau", c.tau},
              {"temporal_encoder", c.temporal_encoder},
              {"weighted_skips", c.weighted_skips}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  try {
    c.input_channels = j.at("input_channels").get<int>();
    c.output_channels = j.at("output_channels").get<int>();
    c.filters = j.at("filters").get<int>();
    c.bottleneck_depth = j.at("bottleneck_depth").get<int>();
    c.levels = j.at("levels").get<int>();
    c.heads = j.at("heads").get<int>();
    c.key_dim = j.at("key_dim").get<int>();
    c.norm_groups = j.at("norm_groups").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.positional_encoding = positional_encoding_mode_from_string(j.at("positional_encoding").get<std::string>());
    c.tau = j.at("tau").get<double>();
    c.temporal_encoder = j.at("temporal_encoder").get<bool>();
    c.weighted_skips = j.at("weighted_skips").get<bool>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("invalid model config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid model config: ") + e.what());
  }
  return c;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  return v;
}

}  // namespace

std::string config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed config JSON: ") + e.what());
  }
}

void save_archive(const TensorArchive& archive, const std::filesystem::path& path) {
  json header;
  header["kind"] = archive.kind;
  header["config"] = config_json(archive.config);
  json list = json::array();
  std::size_t offset = 0;
  std::vector<float> payload;
  for (const NamedTensor& t : archive.tensors) {
    std::size_t expected = 1;
    for (int s : t.shape) expected *= static_cast<std::size_t>(s);
    if (expected != t.values.size()) throw CheckpointError("tensor " + t.name + ": shape does not match values");
    list.push_back(json{{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.values.size()}});
    payload.insert(payload.end(), t.values.begin(), t.values.end());
    offset += t.values.size();
  }
  header["tensors"] = list;
  header["extra"] = json::parse(archive.extra);
  const std::string text = header.dump();

  std::vector<std::uint8_t> bytes(kCheckpointMagic, kCheckpointMagic + 8);
  put_u32(bytes, kCheckpointVersion);
  put_u32(bytes, static_cast<std::uint32_t>(text.size()));
  bytes.insert(bytes.end(), text.begin(), text.end());
  const std::vector<std::uint8_t> blob = encode_f32_le(payload);
  bytes.insert(bytes.end(), blob.begin(), blob.end());
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_file_bytes(path, bytes);
}

TensorArchive load_archive(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("checkpoint not found: " + path.string());
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::string where = path.string() + ": ";
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError(where + "not a checkpoint file");
  }
  const std::uint32_t version = get_u32(bytes, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(where + "unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(bytes, 12);
  if (16 + static_cast<std::size_t>(header_len) > bytes.size()) throw CheckpointError(where + "truncated header");
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + header_len);
  } catch (const json::exception& e) {
    throw CheckpointError(where + "malformed header (" + e.what() + ")");
  }
  const std::size_t payload_at = 16 + header_len;
  if ((bytes.size() - payload_at) % 4 != 0) throw CheckpointError(where + "payload is not float32 aligned");
  const std::vector<float> payload = decode_f32_le(
      std::span<const std::uint8_t>(bytes.data() + payload_at, bytes.size() - payload_at));

  TensorArchive archive;
  try {
    archive.kind = header.at("kind").get<std::string>();
    archive.config = config_from(header.at("config"));
    archive.extra = header.contains("extra") ? header.at("extra").dump() : "{}";
    for (const json& t : header.at("tensors")) {
      NamedTensor tensor;
      tensor.name = t.at("name").get<std::string>();
      tensor.shape = t.at("shape").get<std::vector<int>>();
      const auto off = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (off + count > payload.size()) throw CheckpointError(where + "tensor " + tensor.name + " out of range");
      tensor.values.assign(payload.begin() + static_cast<std::ptrdiff_t>(off),
                           payload.begin() + static_cast<std::ptrdiff_t>(off + count));
      archive.tensors.push_back(std::move(tensor));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(where + "malformed header (" + e.what() + ")");
  }
  return archive;
}

void save_weights(const ModelWeights& weights, const std::filesystem::path& path) {
  for (const NamedTensor& t : weights.tensors) {
    for (float v : t.values) {
      if (!std::isfinite(v)) throw CheckpointError("refusing to save non-finite weights in " + t.name);
    }
  }
  save_archive(TensorArchive{"weights", weights.config, weights.tensors, "{}"}, path);
}

ModelWeights load_weights(const std::filesystem::path& path) {
  TensorArchive archive = load_archive(path);
  if (archive.kind != "weights") throw CheckpointError(path.string() + ": not a weights checkpoint");
  return ModelWeights{archive.config, std::move(archive.tensors)};
}

}  // namespace utilise
