#pragma once

#include "resmatch/sampler.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace resmatch::calibration {

struct CalibrationPoint {
    std::string image_id;
    double rmv = 0.0;  ///< sqrt(mean pixel variance) of the ensemble
    double rmse = 0.0; ///< error of the ensemble mean against ground truth
};

struct CalibrationFit {
    double alpha = 1.0;
    double beta = 0.0;
    double r2 = 0.0;
    std::vector<CalibrationPoint> points;

    double calibrated(double rmv) const { return alpha * rmv + beta; }
};

/// sqrt(mean(pixel_std^2)); requires K >= 2.
double rmv(const sampler::PosteriorEnsemble& ensemble);
double rmv(const Image& pixel_std);

CalibrationPoint make_point(const std::string& image_id, const sampler::PosteriorEnsemble& ensemble,
                            const Image& gt);
/// Same, from stored ensemble statistics.
CalibrationPoint make_point(const std::string& image_id, const Image& mean, const Image& pixel_std,
                            const Image& gt);

/// Ordinary least squares of rmse on rmv. Throws DegenerateFitError when
/// every rmv is equal.
CalibrationFit fit_linear(std::vector<CalibrationPoint> points);

/// Sum of squared residuals of rmse - (alpha rmv + beta).
double objective(const std::vector<CalibrationPoint>& points, double alpha, double beta);

/// CSV: header `image_id,rmv,rmse,rmv_calibrated`, one row per point, then a
/// final `#fit,alpha=...,beta=...,r2=...` summary row.
void reliability_export(const CalibrationFit& fit, const std::filesystem::path& path);
CalibrationFit reliability_import(const std::filesystem::path& path);

} // namespace resmatch::calibration
