#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "utilise/datamodel.hpp"

namespace utilise {

enum class BaselineMethod { kLast, kClosest, kLinear };
const char* to_string(BaselineMethod method);
BaselineMethod baseline_from_string(const std::string& name);

// Output of a per-pixel temporal baseline over the reconstruct channels.
struct BaselineResult {
  Shape4 shape;                 // T x C_rec x H x W
  std::vector<double> values;  // double so interpolation is not rounded to float
  // Pixels (y * W + x) without any valid observation; their time lines are
  // left at the input values.
  std::vector<int> unobserved_pixels;
};

// Each pixel time line is filled from the record's own valid observations
// (mask = 1). Valid values are copied unchanged. Gaps before the first or
// after the last observation take the nearest observed value.
BaselineResult impute_last(const SampleRecord& record);
BaselineResult impute_closest(const SampleRecord& record);  // equal distance: earlier frame
BaselineResult impute_linear(const SampleRecord& record);   // interpolation in days
BaselineResult impute_baseline(const SampleRecord& record, BaselineMethod method);

}  // namespace utilise
