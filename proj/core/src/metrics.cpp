#include "utilise/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "utilise/container.hpp"

namespace utilise {
namespace {

void check(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
           std::span<const std::uint8_t> domain) {
  if (pred.size() != shape.volume() || target.size() != shape.volume()) {
    throw std::invalid_argument("metrics: volume size does not match shape");
  }
  if (domain.size() != static_cast<std::size_t>(shape.frames) * shape.frame_pixels()) {
    throw std::invalid_argument("metrics: domain size does not match shape");
  }
}

// Sum of |d|^p over domain pixels and channels.
std::pair<double, std::size_t> power_sum(std::span<const double> pred, std::span<const double> target,
                                         const Shape4& shape, std::span<const std::uint8_t> domain, int p) {
  check(pred, target, shape, domain);
  const std::size_t plane = shape.frame_pixels();
  double sum = 0.0;
  std::size_t count = 0;
  for (int t = 0; t < shape.frames; ++t) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (!domain[static_cast<std::size_t>(t) * plane + i]) continue;
      ++count;
      for (int c = 0; c < shape.channels; ++c) {
        const std::size_t k = (static_cast<std::size_t>(t) * shape.channels + c) * plane + i;
        const double d = pred[k] - target[k];
        sum += p == 1 ? std::abs(d) : d * d;
      }
    }
  }
  return {sum, count};
}

std::string cell(const std::optional<double>& v) {
  if (!v) return "";
  if (std::isinf(*v)) return "inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", *v);
  return buf;
}

}  // namespace

std::size_t EvalDomain::omega_count() const { return static_cast<std::size_t>(std::count(omega.begin(), omega.end(), 1)); }
std::size_t EvalDomain::valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }

EvalDomain make_eval_domain(const SampleRecord& input, const SampleRecord& reference) {
  if (input.frames() != reference.frames() || input.height() != reference.height() ||
      input.width() != reference.width()) {
    throw std::invalid_argument("make_eval_domain: sample " + input.sample_id + " does not align with its reference");
  }
  EvalDomain d;
  d.frames = input.frames();
  d.height = input.height();
  d.width = input.width();
  const std::size_t plane = input.shape.frame_pixels();
  d.omega.assign(input.mask.size(), 0);
  d.valid.assign(input.mask.size(), 0);
  for (int t = 0; t < d.frames; ++t) {
    bool masked = false;
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = static_cast<std::size_t>(t) * plane + i;
      const bool observed = input.mask[k] == 1.0f;
      d.valid[k] = observed ? 1 : 0;
      d.omega[k] = (!observed && reference.mask[k] == 1.0f) ? 1 : 0;
      masked = masked || !observed;
    }
    if (masked) d.masked_frames.push_back(t);
  }
  return d;
}

std::optional<double> mae(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                          std::span<const std::uint8_t> domain) {
  const auto [sum, count] = power_sum(pred, target, shape, domain, 1);
  if (count == 0) return std::nullopt;
  return sum / (static_cast<double>(count) * shape.channels);
}

std::optional<double> rmse(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                           std::span<const std::uint8_t> domain) {
  const auto [sum, count] = power_sum(pred, target, shape, domain, 2);
  if (count == 0) return std::nullopt;
  return std::sqrt(sum / (static_cast<double>(count) * shape.channels));
}

SamResult sam(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
              std::span<const std::uint8_t> domain) {
  check(pred, target, shape, domain);
  const std::size_t plane = shape.frame_pixels();
  SamResult result;
  double sum = 0.0;
  std::size_t used = 0;
  for (int t = 0; t < shape.frames; ++t) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (!domain[static_cast<std::size_t>(t) * plane + i]) continue;
      double dot = 0.0, np = 0.0, nt = 0.0;
      for (int c = 0; c < shape.channels; ++c) {
        const std::size_t k = (static_cast<std::size_t>(t) * shape.channels + c) * plane + i;
        dot += pred[k] * target[k];
        np += pred[k] * pred[k];
        nt += target[k] * target[k];
      }
      if (np == 0.0 || nt == 0.0) {
        ++result.skipped;
        continue;
      }
      const double cosine = std::clamp(dot / (std::sqrt(np) * std::sqrt(nt)), -1.0, 1.0);
      sum += std::acos(cosine);
      ++used;
    }
  }
  if (used > 0) result.degrees = sum / static_cast<double>(used) * 180.0 / std::numbers::pi;
  return result;
}

double psnr_from_rmse(double value) {
  if (value < 0.0 || std::isnan(value)) throw std::invalid_argument("psnr_from_rmse: rmse must be >= 0");
  if (value == 0.0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(1.0 / value);
}

std::optional<double> psnr(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                           std::span<const std::uint8_t> domain) {
  const std::optional<double> r = rmse(pred, target, shape, domain);
  if (!r) return std::nullopt;
  return psnr_from_rmse(*r);
}

std::optional<double> ssim_image(const double* a, const double* b, std::size_t n, const std::uint8_t* mask) {
  double ma = 0.0, mb = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask != nullptr && !mask[i]) continue;
    ma += a[i];
    mb += b[i];
    ++count;
  }
  if (count == 0) return std::nullopt;
  ma /= static_cast<double>(count);
  mb /= static_cast<double>(count);
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask != nullptr && !mask[i]) continue;
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  va /= static_cast<double>(count);
  vb /= static_cast<double>(count);
  cov /= static_cast<double>(count);
  return ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
         ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
}

double ssim_image(const double* a, const double* b, std::size_t n) {
  if (n == 0) throw std::invalid_argument("ssim_image: empty image");
  return *ssim_image(a, b, n, nullptr);
}

std::optional<double> ssim(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                           std::span<const int> frames) {
  if (pred.size() != shape.volume() || target.size() != shape.volume()) {
    throw std::invalid_argument("ssim: volume size does not match shape");
  }
  if (frames.empty()) return std::nullopt;
  const std::size_t plane = shape.frame_pixels();
  double total = 0.0;
  for (int t : frames) {
    if (t < 0 || t >= shape.frames) throw std::invalid_argument("ssim: frame index out of range");
    double frame = 0.0;
    for (int c = 0; c < shape.channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(t) * shape.channels + c) * plane;
      frame += ssim_image(pred.data() + off, target.data() + off, plane);
    }
    total += frame / shape.channels;
  }
  return total / static_cast<double>(frames.size());
}

std::optional<double> ssim_masked(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                                  std::span<const std::uint8_t> domain) {
  check(pred, target, shape, domain);
  const std::size_t plane = shape.frame_pixels();
  double total = 0.0;
  std::size_t frames = 0;
  for (int t = 0; t < shape.frames; ++t) {
    const std::uint8_t* m = domain.data() + static_cast<std::size_t>(t) * plane;
    if (std::none_of(m, m + plane, [](std::uint8_t v) { return v != 0; })) continue;
    double frame = 0.0;
    for (int c = 0; c < shape.channels; ++c) {
      const std::size_t off = (static_cast<std::size_t>(t) * shape.channels + c) * plane;
      frame += *ssim_image(pred.data() + off, target.data() + off, plane, m);
    }
    total += frame / shape.channels;
    ++frames;
  }
  if (frames == 0) return std::nullopt;
  return total / static_cast<double>(frames);
}

SequenceMetrics evaluate_sequence(std::span<const double> pred, const SampleRecord& input,
                                  const SampleRecord& reference) {
  const std::vector<int> channels = reference.reconstruct_channels();
  const Shape4 shape{reference.frames(), static_cast<int>(channels.size()), reference.height(), reference.width()};
  if (pred.size() != shape.volume()) {
    throw std::invalid_argument("evaluate_sequence: prediction for sample " + input.sample_id +
                                " does not match the reference shape");
  }
  std::vector<double> target(shape.volume());
  const std::size_t plane = shape.frame_pixels();
  for (int t = 0; t < shape.frames; ++t) {
    for (std::size_t j = 0; j < channels.size(); ++j) {
      const float* src = reference.images.data() + reference.image_index(t, channels[j], 0, 0);
      std::copy(src, src + plane, target.begin() + static_cast<std::ptrdiff_t>((t * channels.size() + j) * plane));
    }
  }
  const EvalDomain d = make_eval_domain(input, reference);
  SequenceMetrics m;
  m.sample_id = input.sample_id;
  m.omega_pixels = d.omega_count();
  m.masked_frames = d.masked_frames.size();
  m.mae = mae(pred, target, shape, d.omega);
  m.rmse = rmse(pred, target, shape, d.omega);
  const SamResult s = sam(pred, target, shape, d.omega);
  m.sam = s.degrees;
  m.sam_skipped = s.skipped;
  if (m.rmse) m.psnr = psnr_from_rmse(*m.rmse);
  m.ssim = ssim(pred, target, shape, d.masked_frames);
  m.mae_valid = mae(pred, target, shape, d.valid);
  m.ssim_valid = ssim_masked(pred, target, shape, d.valid);
  return m;
}

ReportRow aggregate(const std::string& split, const std::string& method, std::span<const SequenceMetrics> rows) {
  ReportRow out;
  out.split = split;
  out.method = method;
  out.sequences = rows.size();
  const auto mean = [&](auto field, bool skip_inf) -> std::optional<double> {
    double sum = 0.0;
    std::size_t n = 0;
    for (const SequenceMetrics& r : rows) {
      const std::optional<double>& v = r.*field;
      if (!v || (skip_inf && std::isinf(*v))) continue;
      sum += *v;
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  };
  out.mae = mean(&SequenceMetrics::mae, false);
  out.rmse = mean(&SequenceMetrics::rmse, false);
  out.sam = mean(&SequenceMetrics::sam, false);
  out.psnr = mean(&SequenceMetrics::psnr, true);
  out.ssim = mean(&SequenceMetrics::ssim, false);
  out.mae_valid = mean(&SequenceMetrics::mae_valid, false);
  out.ssim_valid = mean(&SequenceMetrics::ssim_valid, false);
  for (const SequenceMetrics& r : rows) {
    if (!r.mae) ++out.excluded;
    if (r.psnr && std::isinf(*r.psnr)) ++out.psnr_infinite;
    out.sam_skipped += r.sam_skipped;
  }
  return out;
}

void write_report_csv(std::span<const ReportRow> rows, const std::filesystem::path& path) {
  std::string text =
      "split,method,mae,rmse,sam_deg,psnr_db,ssim,mae_valid,ssim_valid,sequences,excluded,psnr_infinite,sam_skipped\n";
  for (const ReportRow& r : rows) {
    text += r.split + "," + r.method + "," + cell(r.mae) + "," + cell(r.rmse) + "," + cell(r.sam) + "," +
            cell(r.psnr) + "," + cell(r.ssim) + "," + cell(r.mae_valid) + "," + cell(r.ssim_valid) + "," +
            std::to_string(r.sequences) + "," + std::to_string(r.excluded) + "," + std::to_string(r.psnr_infinite) +
            "," + std::to_string(r.sam_skipped) + "\n";
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, text);
}

void write_detail_csv(const std::string& split, const std::string& method, std::span<const SequenceMetrics> rows,
                      const std::filesystem::path& path, bool append) {
  const bool header = !append || !std::filesystem::exists(path);
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  if (header) {
    out << "split,method,sample_id,mae,rmse,sam_deg,psnr_db,ssim,mae_valid,ssim_valid,omega_pixels,masked_frames,"
           "sam_skipped\n";
  }
  for (const SequenceMetrics& r : rows) {
    out << split << "," << method << "," << r.sample_id << "," << cell(r.mae) << "," << cell(r.rmse) << ","
        << cell(r.sam) << "," << cell(r.psnr) << "," << cell(r.ssim) << "," << cell(r.mae_valid) << ","
        << cell(r.ssim_valid) << "," << r.omega_pixels << "," << r.masked_frames << "," << r.sam_skipped << "\n";
  }
}

}  // namespace utilise
