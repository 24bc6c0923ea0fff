#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "utilise/datamodel.hpp"
#include "utilise/gapsim.hpp"
#include "utilise/model.hpp"
#include "utilise/rng.hpp"

namespace utilise::testing {

// Random record with values in [0, 1], random binary mask and increasing days.
inline SampleRecord random_record(Rng& rng, Shape4 shape, double valid_probability = 1.0,
                                  const std::string& id = "rand") {
  std::vector<int> days;
  int day = rng.uniform_int(1, 20);
  for (int t = 0; t < shape.frames; ++t) {
    days.push_back(day);
    day += rng.uniform_int(1, 20);
  }
  SampleRecord r = SampleRecord::make(id, shape, days);
  for (float& v : r.images) v = static_cast<float>(rng.uniform());
  for (float& m : r.mask) m = rng.bernoulli(valid_probability) ? 1.0f : 0.0f;
  return r;
}

inline MaskPool random_pool(Rng& rng, int height, int width, int count = 8) {
  MaskPool pool;
  for (int i = 0; i < count; ++i) {
    OcclusionMask m = OcclusionMask::empty(height, width);
    for (auto& v : m.occluded) v = rng.bernoulli(0.4) ? 1 : 0;
    pool.add(std::move(m), "random");
  }
  return pool;
}

// T=3, C=2, H=W=16, d=8, D=16, G=2.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.input_channels = 2;
  c.output_channels = 2;
  c.filters = 8;
  c.bottleneck_depth = 16;
  c.heads = 2;
  c.levels = 3;
  return c;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("utilise_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace utilise::testing
