#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "utilise/datamodel.hpp"

namespace utilise {

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

// Evaluation domains of one sequence, each a T x H x W indicator.
struct EvalDomain {
  int frames = 0, height = 0, width = 0;
  std::vector<std::uint8_t> omega;  // masked in the input, clear in the reference
  std::vector<std::uint8_t> valid;  // observed in the input
  std::vector<int> masked_frames;   // frames with at least one masked input pixel

  std::size_t omega_count() const;
  std::size_t valid_count() const;
};

// `reference.mask` carries the reference cloud information (1 = clear).
EvalDomain make_eval_domain(const SampleRecord& input, const SampleRecord& reference);

// Pixel metrics over the pixels flagged in `domain` (T x H x W), averaged over
// channels. Volumes are T x C x H x W. Empty domain: nullopt.
std::optional<double> mae(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                          std::span<const std::uint8_t> domain);
std::optional<double> rmse(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                           std::span<const std::uint8_t> domain);

struct SamResult {
  std::optional<double> degrees;  // mean angle over usable pixels
  std::size_t skipped = 0;        // pixels with a zero-norm spectrum
};
SamResult sam(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
              std::span<const std::uint8_t> domain);

// 20 log10(1 / rmse); +infinity for rmse == 0.
double psnr_from_rmse(double rmse);
std::optional<double> psnr(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                           std::span<const std::uint8_t> domain);

// Global-statistics SSIM of two single-channel images of `n` pixels. With a
// mask, statistics use the flagged pixels only (nullopt if none).
double ssim_image(const double* a, const double* b, std::size_t n);
std::optional<double> ssim_image(const double* a, const double* b, std::size_t n, const std::uint8_t* mask);
// Mean over `frames` of the channel-averaged image SSIM. Empty: nullopt.
std::optional<double> ssim(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                           std::span<const int> frames);
// Mean over frames with at least one flagged pixel of the channel-averaged
// SSIM restricted to flagged pixels.
std::optional<double> ssim_masked(std::span<const double> pred, std::span<const double> target, const Shape4& shape,
                                  std::span<const std::uint8_t> domain);

struct SequenceMetrics {
  std::string sample_id;
  std::optional<double> mae, rmse, sam, psnr, ssim;
  std::optional<double> mae_valid, ssim_valid;
  std::size_t omega_pixels = 0;
  std::size_t masked_frames = 0;
  std::size_t sam_skipped = 0;
};

// `pred` holds T x C_rec x H x W values for the reconstruct channels.
SequenceMetrics evaluate_sequence(std::span<const double> pred, const SampleRecord& input,
                                  const SampleRecord& reference);

struct ReportRow {
  std::string split;
  std::string method;
  std::optional<double> mae, rmse, sam, psnr, ssim, mae_valid, ssim_valid;
  std::size_t sequences = 0;
  std::size_t excluded = 0;        // sequences with an empty imputation domain
  std::size_t psnr_infinite = 0;   // perfect reconstructions left out of the PSNR mean
  std::size_t sam_skipped = 0;
};

// Means of per-sequence values; missing values are left out of each mean.
ReportRow aggregate(const std::string& split, const std::string& method, std::span<const SequenceMetrics> rows);

void write_report_csv(std::span<const ReportRow> rows, const std::filesystem::path& path);
void write_detail_csv(const std::string& split, const std::string& method, std::span<const SequenceMetrics> rows,
                      const std::filesystem::path& path, bool append);

}  // namespace utilise
