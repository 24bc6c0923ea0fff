#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "utilise/datamodel.hpp"
#include "utilise/model.hpp"

namespace utilise {

// Overlapping fixed-length windows over a sequence and the window each frame
// is read from.
struct WindowPlan {
  std::vector<std::pair<int, int>> windows;  // [start, end)
  std::vector<int> assignment;               // frame -> window index
};

// One window [0, length) when length <= window. Otherwise windows of `window`
// frames with stride ceil(window / 2), the last one ending at `length`; each
// frame is assigned to the window with the nearest center (ties go to the
// earlier window). Throws std::invalid_argument if length < 1 or window < 2.
WindowPlan plan_windows(int length, int window);
std::string describe(const WindowPlan& plan);

// Stacks records of equal shape into a batched network input.
nn::ModelInput<float> make_model_input(std::span<const SampleRecord* const> records);
nn::ModelInput<float> make_model_input(const SampleRecord& record);

// Copies the reconstruct channels of `record` into a T x C_rec x H x W volume.
std::vector<float> reconstruct_volume(const SampleRecord& record);

struct Imputation {
  Shape4 shape;               // T_i x C_out x H x W
  std::vector<float> values;
  WindowPlan plan;
  std::vector<AttentionVolume> attention;  // one per window, bottleneck resolution
};

// Imputes a full-length imprinted record with a model trained on `window`
// frames. Sequences shorter than the window are padded for the forward pass.
Imputation impute_sequence(const UTilise<float>& model, const SampleRecord& record, int window);

// `source` with its reconstruct channels replaced by the imputation, all
// pixels marked valid, and provenance stored in the metadata.
SampleRecord imputed_record(const SampleRecord& source, const Imputation& imputation,
                            const std::string& checkpoint_id);

}  // namespace utilise
