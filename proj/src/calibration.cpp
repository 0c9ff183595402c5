#include "resmatch/calibration.hpp"

#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"
#include "resmatch/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace resmatch::calibration {
namespace {

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) {
            throw std::invalid_argument(s);
        }
        return v;
    } catch (const std::exception&) {
        throw FormatError(path, "invalid number '" + s + "'");
    }
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
        out.push_back(field);
    }
    return out;
}

} // namespace

double rmv(const sampler::PosteriorEnsemble& ensemble) {
    if (ensemble.K < 2 || !ensemble.pixel_std) {
        throw std::invalid_argument("rmv: ensemble needs K >= 2 samples");
    }
    return rmv(*ensemble.pixel_std);
}

double rmv(const Image& sd) {
    if (sd.empty()) {
        throw std::invalid_argument("rmv: empty std image");
    }
    double sum = 0.0;
    for (float v : sd.pixels()) {
        sum += static_cast<double>(v) * v;
    }
    return std::sqrt(sum / static_cast<double>(sd.size()));
}

CalibrationPoint make_point(const std::string& image_id, const sampler::PosteriorEnsemble& ensemble,
                            const Image& gt) {
    return {image_id, rmv(ensemble), metrics::rmse(sampler::mmse(ensemble), gt)};
}

CalibrationPoint make_point(const std::string& image_id, const Image& mean, const Image& pixel_std,
                            const Image& gt) {
    require_same_shape(mean, pixel_std, "calibration: ensemble statistics");
    return {image_id, rmv(pixel_std), metrics::rmse(mean, gt)};
}

double objective(const std::vector<CalibrationPoint>& points, double alpha, double beta) {
    double s = 0.0;
    for (const CalibrationPoint& p : points) {
        const double r = p.rmse - (alpha * p.rmv + beta);
        s += r * r;
    }
    return s;
}

CalibrationFit fit_linear(std::vector<CalibrationPoint> points) {
    if (points.size() < 2) {
        throw std::invalid_argument("fit_linear: need at least 2 points");
    }
    const auto n = static_cast<double>(points.size());
    double mx = 0.0;
    double my = 0.0;
    for (const CalibrationPoint& p : points) {
        mx += p.rmv;
        my += p.rmse;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double sxy = 0.0;
    double syy = 0.0;
    for (const CalibrationPoint& p : points) {
        sxx += (p.rmv - mx) * (p.rmv - mx);
        sxy += (p.rmv - mx) * (p.rmse - my);
        syy += (p.rmse - my) * (p.rmse - my);
    }
    const bool all_equal = std::all_of(points.begin(), points.end(), [&](const CalibrationPoint& p) {
        return p.rmv == points.front().rmv;
    });
    if (all_equal || sxx == 0.0) {
        throw DegenerateFitError("fit_linear: all rmv values are equal; slope is undefined");
    }
    CalibrationFit fit;
    fit.alpha = sxy / sxx;
    fit.beta = my - fit.alpha * mx;
    fit.points = std::move(points);
    const double ss_res = objective(fit.points, fit.alpha, fit.beta);
    fit.r2 = syy > 0.0 ? 1.0 - ss_res / syy : (ss_res == 0.0 ? 1.0 : 0.0);
    return fit;
}

void reliability_export(const CalibrationFit& fit, const std::filesystem::path& path) {
    std::string out = "image_id,rmv,rmse,rmv_calibrated\n";
    for (const CalibrationPoint& p : fit.points) {
        out += p.image_id + "," + fmt(p.rmv) + "," + fmt(p.rmse) + "," + fmt(fit.calibrated(p.rmv)) +
               "\n";
    }
    out += "#fit,alpha=" + fmt(fit.alpha) + ",beta=" + fmt(fit.beta) + ",r2=" + fmt(fit.r2) + "\n";
    write_file_atomic(path, out);
}

CalibrationFit reliability_import(const std::filesystem::path& path) {
    std::stringstream in(read_file(path));
    std::string line;
    if (!std::getline(in, line) || line != "image_id,rmv,rmse,rmv_calibrated") {
        throw FormatError(path, "missing calibration header");
    }
    CalibrationFit fit;
    bool have_summary = false;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto fields = split(line);
        if (fields.size() != 4) {
            throw FormatError(path, "expected 4 columns in '" + line + "'");
        }
        if (fields[0] == "#fit") {
            auto value = [&](const std::string& f, const std::string& key) {
                if (f.rfind(key + "=", 0) != 0) {
                    throw FormatError(path, "malformed summary field '" + f + "'");
                }
                return parse_double(f.substr(key.size() + 1), path);
            };
            fit.alpha = value(fields[1], "alpha");
            fit.beta = value(fields[2], "beta");
            fit.r2 = value(fields[3], "r2");
            have_summary = true;
            continue;
        }
        fit.points.push_back(
            {fields[0], parse_double(fields[1], path), parse_double(fields[2], path)});
    }
    if (!have_summary) {
        throw FormatError(path, "missing #fit summary row");
    }
    return fit;
}

} // namespace resmatch::calibration
