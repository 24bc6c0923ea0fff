#include "utilise/baselines.hpp"

#include <stdexcept>

namespace utilise {
namespace {

// Fills one time line in place. `valid` flags observations.
void fill_line(std::vector<double>& v, const std::vector<char>& valid, const std::vector<int>& days,
               BaselineMethod method) {
  const int n = static_cast<int>(v.size());
  std::vector<int> prev(static_cast<std::size_t>(n), -1);
  std::vector<int> next(static_cast<std::size_t>(n), -1);
  for (int t = 0, last = -1; t < n; ++t) {
    if (valid[static_cast<std::size_t>(t)]) last = t;
    prev[static_cast<std::size_t>(t)] = last;
  }
  for (int t = n - 1, last = -1; t >= 0; --t) {
    if (valid[static_cast<std::size_t>(t)]) last = t;
    next[static_cast<std::size_t>(t)] = last;
  }
  std::vector<double> out = v;
  for (int t = 0; t < n; ++t) {
    const auto i = static_cast<std::size_t>(t);
    if (valid[i]) continue;
    const int p = prev[i];
    const int q = next[i];
    if (p < 0) {
      out[i] = v[static_cast<std::size_t>(q)];
      continue;
    }
    if (q < 0) {
      out[i] = v[static_cast<std::size_t>(p)];
      continue;
    }
    const double vp = v[static_cast<std::size_t>(p)];
    const double vq = v[static_cast<std::size_t>(q)];
    switch (method) {
      case BaselineMethod::kLast:
        out[i] = vp;
        break;
      case BaselineMethod::kClosest:
        out[i] = days[i] - days[static_cast<std::size_t>(p)] <= days[static_cast<std::size_t>(q)] - days[i] ? vp : vq;
        break;
      case BaselineMethod::kLinear: {
        const double d0 = days[static_cast<std::size_t>(p)];
        const double d1 = days[static_cast<std::size_t>(q)];
        out[i] = vp + (days[i] - d0) / (d1 - d0) * (vq - vp);
        break;
      }
    }
  }
  v = std::move(out);
}

}  // namespace

const char* to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kLast: return "last";
    case BaselineMethod::kClosest: return "closest";
    case BaselineMethod::kLinear: return "linear";
  }
  return "?";
}

BaselineMethod baseline_from_string(const std::string& name) {
  if (name == "last") return BaselineMethod::kLast;
  if (name == "closest") return BaselineMethod::kClosest;
  if (name == "linear") return BaselineMethod::kLinear;
  throw std::invalid_argument("unknown baseline '" + name + "' (expected last, closest or linear)");
}

BaselineResult impute_baseline(const SampleRecord& record, BaselineMethod method) {
  const std::vector<int> channels = record.reconstruct_channels();
  const int T = record.frames();
  const int H = record.height();
  const int W = record.width();
  if (record.days.size() != static_cast<std::size_t>(T)) {
    throw std::invalid_argument("impute_baseline: sample " + record.sample_id + " days do not match frames");
  }
  BaselineResult result;
  result.shape = Shape4{T, static_cast<int>(channels.size()), H, W};
  result.values.assign(result.shape.volume(), 0.0);
  std::vector<char> valid(static_cast<std::size_t>(T));
  std::vector<double> line(static_cast<std::size_t>(T));
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      bool any = false;
      for (int t = 0; t < T; ++t) {
        valid[static_cast<std::size_t>(t)] = record.valid(t, y, x) == 1.0f;
        any = any || valid[static_cast<std::size_t>(t)];
      }
      if (!any) result.unobserved_pixels.push_back(y * W + x);
      for (std::size_t j = 0; j < channels.size(); ++j) {
        for (int t = 0; t < T; ++t) line[static_cast<std::size_t>(t)] = record.image(t, channels[j], y, x);
        if (any) fill_line(line, valid, record.days, method);
        for (int t = 0; t < T; ++t) {
          result.values[((static_cast<std::size_t>(t) * channels.size() + j) * H + y) * W + x] =
              line[static_cast<std::size_t>(t)];
        }
      }
    }
  }
  return result;
}

BaselineResult impute_last(const SampleRecord& record) { return impute_baseline(record, BaselineMethod::kLast); }
BaselineResult impute_closest(const SampleRecord& record) {
  return impute_baseline(record, BaselineMethod::kClosest);
}
BaselineResult impute_linear(const SampleRecord& record) { return impute_baseline(record, BaselineMethod::kLinear); }

}  // namespace utilise
