#pragma once

#include "resmatch/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace resmatch::metrics {

/// max(gt) - min(gt), or 1 for a constant image.
double default_data_range(const Image& gt);

/// 10 log10(range^2 / mse); +infinity when the images are identical.
double psnr(const Image& pred, const Image& gt, double data_range);

double rmse(const Image& pred, const Image& gt);

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean luminance, contrast-structure and combined SSIM over all valid
/// (fully inside) Gaussian windows.
struct SsimTerms {
    double luminance = 1.0;
    double contrast_structure = 1.0;
    double ssim = 1.0;
};

SsimTerms ssim_terms(const Image& pred, const Image& gt, double data_range);
double ssim(const Image& pred, const Image& gt, double data_range);

/// Uniform-weight multi-scale SSIM: mean cs at every scale, luminance at the
/// coarsest, scales separated by 2x2 box downsampling.
double ms_ssim(const Image& pred, const Image& gt, double data_range, int scales = 3);

/// Halves each dimension by averaging 2x2 blocks (odd trailing rows/cols dropped).
Image downsample2(const Image& img);

struct MetricRow {
    std::string image_id;
    double psnr = 0.0;
    double ssim = 0.0;
    double ms_ssim = 0.0;
    double rmse = 0.0;
};

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    Aggregate psnr;
    Aggregate ssim;
    Aggregate ms_ssim;
    Aggregate rmse;
};

/// data_range defaults to default_data_range(gt) per image.
MetricRow evaluate(const std::string& image_id, const Image& pred, const Image& gt,
                   std::optional<double> data_range = std::nullopt, int ms_scales = 3);

MetricReport summarize(std::vector<MetricRow> rows);

/// Columns image_id, psnr, ssim, ms_ssim, rmse. Written atomically.
void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report);

} // namespace resmatch::metrics
