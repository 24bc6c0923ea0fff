#include "utilise/infer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "utilise/gapsim.hpp"

namespace utilise {

WindowPlan plan_windows(int length, int window) {
  if (length < 1) throw std::invalid_argument("plan_windows: length must be >= 1");
  if (window < 2) throw std::invalid_argument("plan_windows: window must be >= 2");
  WindowPlan plan;
  if (length <= window) {
    plan.windows.emplace_back(0, length);
    plan.assignment.assign(static_cast<std::size_t>(length), 0);
    return plan;
  }
  const int stride = (window + 1) / 2;
  for (int s = 0; s + window < length; s += stride) plan.windows.emplace_back(s, s + window);
  plan.windows.emplace_back(length - window, length);

  plan.assignment.resize(static_cast<std::size_t>(length));
  for (int t = 0; t < length; ++t) {
    int best = -1;
    double best_dist = 0.0;
    for (std::size_t w = 0; w < plan.windows.size(); ++w) {
      const auto [start, end] = plan.windows[w];
      if (t < start || t >= end) continue;
      const double dist = std::abs(t - 0.5 * (start + end - 1));
      if (best < 0 || dist < best_dist) {
        best = static_cast<int>(w);
        best_dist = dist;
      }
    }
    plan.assignment[static_cast<std::size_t>(t)] = best;
  }
  return plan;
}

std::string describe(const WindowPlan& plan) {
  std::string out;
  for (const auto& [start, end] : plan.windows) {
    if (!out.empty()) out += ";";
    out += std::to_string(start) + "-" + std::to_string(end);
  }
  return out;
}

nn::ModelInput<float> make_model_input(std::span<const SampleRecord* const> records) {
  if (records.empty()) throw std::invalid_argument("make_model_input: empty batch");
  const Shape4 shape = records.front()->shape;
  nn::ModelInput<float> input;
  input.batch = static_cast<int>(records.size());
  input.frames = shape.frames;
  input.images = nn::Volume<float>(input.batch * shape.frames, shape.channels, shape.height, shape.width);
  input.days.reserve(static_cast<std::size_t>(input.batch) * shape.frames);
  float* dst = input.images.data.data();
  for (const SampleRecord* r : records) {
    if (!(r->shape == shape)) {
      throw std::invalid_argument("make_model_input: sample " + r->sample_id + " shape differs from batch");
    }
    dst = std::copy(r->images.begin(), r->images.end(), dst);
    input.days.insert(input.days.end(), r->days.begin(), r->days.end());
  }
  return input;
}

nn::ModelInput<float> make_model_input(const SampleRecord& record) {
  const SampleRecord* one[] = {&record};
  return make_model_input(std::span<const SampleRecord* const>(one));
}

std::vector<float> reconstruct_volume(const SampleRecord& record) {
  const std::vector<int> channels = record.reconstruct_channels();
  const std::size_t plane = record.shape.frame_pixels();
  std::vector<float> out(static_cast<std::size_t>(record.frames()) * channels.size() * plane);
  float* dst = out.data();
  for (int t = 0; t < record.frames(); ++t) {
    for (int c : channels) {
      const float* src = record.images.data() + record.image_index(t, c, 0, 0);
      dst = std::copy(src, src + plane, dst);
    }
  }
  return out;
}

Imputation impute_sequence(const UTilise<float>& model, const SampleRecord& record, int window) {
  const ModelConfig& config = model.config();
  if (record.channels() != config.input_channels) {
    throw std::invalid_argument("impute_sequence: sample " + record.sample_id + " has " +
                                std::to_string(record.channels()) + " channels, model expects " +
                                std::to_string(config.input_channels));
  }
  Imputation result;
  result.shape = Shape4{record.frames(), config.output_channels, record.height(), record.width()};
  result.values.assign(result.shape.volume(), 0.0f);
  result.plan = plan_windows(record.frames(), window);
  const std::size_t frame_size = static_cast<std::size_t>(config.output_channels) * record.shape.frame_pixels();

  Rng unused(0);
  nn::ForwardCache<float> cache;
  for (std::size_t w = 0; w < result.plan.windows.size(); ++w) {
    const auto [start, end] = result.plan.windows[w];
    SampleRecord piece = record.slice_frames(start, end);
    if (piece.frames() < window) piece = trim_or_pad(piece, window, unused, TrimMode::kEval).record;
    model.forward(make_model_input(piece), cache);
    result.attention.push_back(model.attention(cache, 0));
    for (int t = start; t < end; ++t) {
      if (result.plan.assignment[static_cast<std::size_t>(t)] != static_cast<int>(w)) continue;
      const float* src = cache.prediction.frame(t - start);
      std::copy(src, src + frame_size, result.values.data() + static_cast<std::size_t>(t) * frame_size);
    }
  }
  return result;
}

SampleRecord imputed_record(const SampleRecord& source, const Imputation& imputation,
                            const std::string& checkpoint_id) {
  const std::vector<int> channels = source.reconstruct_channels();
  if (imputation.shape.frames != source.frames() ||
      imputation.shape.channels != static_cast<int>(channels.size()) ||
      imputation.shape.height != source.height() || imputation.shape.width != source.width()) {
    throw std::invalid_argument("imputed_record: imputation shape does not match sample " + source.sample_id);
  }
  SampleRecord out = source;
  const std::size_t plane = source.shape.frame_pixels();
  for (int t = 0; t < source.frames(); ++t) {
    for (std::size_t j = 0; j < channels.size(); ++j) {
      const float* src = imputation.values.data() + (static_cast<std::size_t>(t) * channels.size() + j) * plane;
      std::copy(src, src + plane, out.images.data() + out.image_index(t, channels[j], 0, 0));
    }
  }
  std::fill(out.mask.begin(), out.mask.end(), 1.0f);
  out.metadata["imputed_by"] = checkpoint_id;
  out.metadata["window_plan"] = describe(imputation.plan);
  return out;
}

}  // namespace utilise
