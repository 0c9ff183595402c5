#include "resmatch/metrics.hpp"

#include "resmatch/io.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>

namespace resmatch::metrics {
namespace {

double mse(const Image& pred, const Image& gt) {
    require_same_shape(pred, gt, "metrics");
    if (pred.empty()) {
        throw std::invalid_argument("metrics: empty image");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.data()[i]) - gt.data()[i];
        sum += d * d;
    }
    return sum / static_cast<double>(pred.size());
}

std::vector<double> ssim_window() {
    std::vector<double> w(kSsimWindow);
    double total = 0.0;
    const int half = kSsimWindow / 2;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - half;
        w[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
        total += w[i];
    }
    for (double& v : w) {
        v /= total;
    }
    return w;
}

/// Valid-mode separable filtering of a double plane.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w,
                                 const std::vector<double>& taps) {
    const int n = static_cast<int>(taps.size());
    const int oh = h - n + 1;
    const int ow = w - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                acc += taps[k] * src[static_cast<std::size_t>(r) * w + c + k];
            }
            tmp[static_cast<std::size_t>(r) * ow + c] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                acc += taps[k] * tmp[static_cast<std::size_t>(r + k) * ow + c];
            }
            out[static_cast<std::size_t>(r) * ow + c] = acc;
        }
    }
    return out;
}

void require_ssim_size(const Image& img, int scales) {
    const int min_side = kSsimWindow << (scales - 1);
    if (img.height() < min_side || img.width() < min_side) {
        throw std::invalid_argument("ssim: image " + std::to_string(img.height()) + "x" +
                                    std::to_string(img.width()) + " too small for " +
                                    std::to_string(scales) + " scale(s); minimum is " +
                                    std::to_string(min_side) + "x" + std::to_string(min_side));
    }
}

Aggregate aggregate(const std::vector<double>& v) {
    Aggregate a;
    if (v.empty()) {
        return a;
    }
    for (double x : v) {
        a.mean += x;
    }
    a.mean /= static_cast<double>(v.size());
    if (v.size() > 1) {
        for (double x : v) {
            a.std += (x - a.mean) * (x - a.mean);
        }
        a.std = std::sqrt(a.std / static_cast<double>(v.size() - 1));
    }
    return a;
}

std::string format_double(double v) {
    if (std::isinf(v)) {
        return v > 0 ? "inf" : "-inf";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

double default_data_range(const Image& gt) {
    const double range = max_value(gt) - min_value(gt);
    return range > 0.0 ? range : 1.0;
}

double psnr(const Image& pred, const Image& gt, double data_range) {
    if (!(data_range > 0.0)) {
        throw std::invalid_argument("psnr: data_range must be > 0");
    }
    const double e = mse(pred, gt);
    if (e == 0.0) {
        return std::numeric_limits<double>::infinity();
    }
    return 10.0 * std::log10(data_range * data_range / e);
}

double rmse(const Image& pred, const Image& gt) { return std::sqrt(mse(pred, gt)); }

SsimTerms ssim_terms(const Image& pred, const Image& gt, double data_range) {
    require_same_shape(pred, gt, "ssim");
    if (!(data_range > 0.0)) {
        throw std::invalid_argument("ssim: data_range must be > 0");
    }
    require_ssim_size(pred, 1);
    const int h = pred.height();
    const int w = pred.width();
    const std::size_t n = pred.size();
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = pred.data()[i];
        y[i] = gt.data()[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const std::vector<double> taps = ssim_window();
    const auto mx = filter_valid(x, h, w, taps);
    const auto my = filter_valid(y, h, w, taps);
    const auto mxx = filter_valid(xx, h, w, taps);
    const auto myy = filter_valid(yy, h, w, taps);
    const auto mxy = filter_valid(xy, h, w, taps);
    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);

    SsimTerms out{0.0, 0.0, 0.0};
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = mxx[i] - mx[i] * mx[i];
        const double vy = myy[i] - my[i] * my[i];
        const double cxy = mxy[i] - mx[i] * my[i];
        const double l = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        const double cs = (2.0 * cxy + c2) / (vx + vy + c2);
        out.luminance += l;
        out.contrast_structure += cs;
        out.ssim += l * cs;
    }
    const auto count = static_cast<double>(mx.size());
    out.luminance /= count;
    out.contrast_structure /= count;
    out.ssim /= count;
    return out;
}

double ssim(const Image& pred, const Image& gt, double data_range) {
    if (bitwise_equal(pred, gt)) {
        require_ssim_size(pred, 1);
        return 1.0;
    }
    return ssim_terms(pred, gt, data_range).ssim;
}

Image downsample2(const Image& img) {
    Image out(img.height() / 2, img.width() / 2);
    for (int r = 0; r < out.height(); ++r) {
        for (int c = 0; c < out.width(); ++c) {
            const double s = static_cast<double>(img(2 * r, 2 * c)) + img(2 * r, 2 * c + 1) +
                             img(2 * r + 1, 2 * c) + img(2 * r + 1, 2 * c + 1);
            out(r, c) = static_cast<float>(0.25 * s);
        }
    }
    return out;
}

double ms_ssim(const Image& pred, const Image& gt, double data_range, int scales) {
    require_same_shape(pred, gt, "ms_ssim");
    if (scales < 1) {
        throw std::invalid_argument("ms_ssim: scales must be >= 1");
    }
    require_ssim_size(pred, scales);
    if (bitwise_equal(pred, gt)) {
        return 1.0;
    }
    const double weight = 1.0 / scales;
    double result = 1.0;
    Image a = pred;
    Image b = gt;
    for (int s = 0; s < scales; ++s) {
        const SsimTerms t = ssim_terms(a, b, data_range);
        // Negative cs has no real fractional power; clamp to zero.
        result *= std::pow(std::max(0.0, t.contrast_structure), weight);
        if (s == scales - 1) {
            result *= std::pow(std::max(0.0, t.luminance), weight);
        } else {
            a = downsample2(a);
            b = downsample2(b);
        }
    }
    return result;
}

MetricRow evaluate(const std::string& image_id, const Image& pred, const Image& gt,
                   std::optional<double> data_range, int ms_scales) {
    const double range = data_range.value_or(default_data_range(gt));
    return {image_id, psnr(pred, gt, range), ssim(pred, gt, range),
            ms_ssim(pred, gt, range, ms_scales), rmse(pred, gt)};
}

MetricReport summarize(std::vector<MetricRow> rows) {
    MetricReport r;
    std::vector<double> p, s, m, e;
    for (const MetricRow& row : rows) {
        p.push_back(row.psnr);
        s.push_back(row.ssim);
        m.push_back(row.ms_ssim);
        e.push_back(row.rmse);
    }
    r.rows = std::move(rows);
    r.psnr = aggregate(p);
    r.ssim = aggregate(s);
    r.ms_ssim = aggregate(m);
    r.rmse = aggregate(e);
    return r;
}

void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report) {
    std::string out = "image_id,psnr,ssim,ms_ssim,rmse\n";
    for (const MetricRow& row : report.rows) {
        out += row.image_id + "," + format_double(row.psnr) + "," + format_double(row.ssim) + "," +
               format_double(row.ms_ssim) + "," + format_double(row.rmse) + "\n";
    }
    write_file_atomic(path, out);
}

} // namespace resmatch::metrics
