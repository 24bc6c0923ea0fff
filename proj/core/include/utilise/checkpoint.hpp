#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "utilise/datamodel.hpp"
#include "utilise/model.hpp"

namespace utilise {

// Binary checkpoint layout (all integers little-endian):
//   bytes 0..7    magic "UTLSCKPT"
//   u32           format version
//   u32           header length N
//   N bytes       UTF-8 JSON header: {"kind", "config", "tensors": [{name, shape,
//                 offset, count}], "extra"}; offsets count float32 elements
//                 from the start of the payload
//   payload       float32 values of every tensor back to back
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "UTLSCKPT";

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& text);

// A tagged list of named float tensors plus a free-form JSON string.
struct TensorArchive {
  std::string kind;   // "weights" or "train_state"
  ModelConfig config;
  std::vector<NamedTensor> tensors;
  std::string extra = "{}";
};

void save_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive load_archive(const std::filesystem::path& path);

void save_weights(const ModelWeights& weights, const std::filesystem::path& path);
ModelWeights load_weights(const std::filesystem::path& path);

}  // namespace utilise
