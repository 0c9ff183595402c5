#include "resmatch/datagen.hpp"

#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"
#include "resmatch/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace resmatch::datagen {
namespace {

struct Point {
    double row;
    double col;
};

double segment_distance_sq(Point p, Point a, Point b) {
    const double dr = b.row - a.row;
    const double dc = b.col - a.col;
    const double len_sq = dr * dr + dc * dc;
    double u = 0.0;
    if (len_sq > 0.0) {
        u = std::clamp(((p.row - a.row) * dr + (p.col - a.col) * dc) / len_sq, 0.0, 1.0);
    }
    const double er = p.row - (a.row + u * dr);
    const double ec = p.col - (a.col + u * dc);
    return er * er + ec * ec;
}

/// Adds one anti-aliased line with a Gaussian cross-section. Within a single
/// polyline the profile is max-combined so joints are not brightened.
void render_polyline(Image& img, const std::vector<Point>& pts, double sigma, double amplitude) {
    if (pts.size() < 2) {
        return;
    }
    const double reach = 3.5 * sigma;
    double rmin = pts[0].row, rmax = pts[0].row, cmin = pts[0].col, cmax = pts[0].col;
    for (const Point& p : pts) {
        rmin = std::min(rmin, p.row);
        rmax = std::max(rmax, p.row);
        cmin = std::min(cmin, p.col);
        cmax = std::max(cmax, p.col);
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(rmin - reach)));
    const int r1 = std::min(img.height() - 1, static_cast<int>(std::ceil(rmax + reach)));
    const int c0 = std::max(0, static_cast<int>(std::floor(cmin - reach)));
    const int c1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cmax + reach)));
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    const double reach_sq = reach * reach;
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const Point p{static_cast<double>(r), static_cast<double>(c)};
            double best = reach_sq;
            for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
                best = std::min(best, segment_distance_sq(p, pts[k], pts[k + 1]));
            }
            if (best < reach_sq) {
                img(r, c) += static_cast<float>(amplitude * std::exp(-best * inv_two_var));
            }
        }
    }
}

void render_ring(Image& img, Point centre, double radius, double sigma, double amplitude) {
    const double reach = radius + 3.5 * sigma;
    const int r0 = std::max(0, static_cast<int>(std::floor(centre.row - reach)));
    const int r1 = std::min(img.height() - 1, static_cast<int>(std::ceil(centre.row + reach)));
    const int c0 = std::max(0, static_cast<int>(std::floor(centre.col - reach)));
    const int c1 = std::min(img.width() - 1, static_cast<int>(std::ceil(centre.col + reach)));
    const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
    for (int r = r0; r <= r1; ++r) {
        for (int c = c0; c <= c1; ++c) {
            const double d = std::hypot(r - centre.row, c - centre.col) - radius;
            img(r, c) += static_cast<float>(amplitude * std::exp(-d * d * inv_two_var));
        }
    }
}

Point catmull_rom(Point p0, Point p1, Point p2, Point p3, double u) {
    const double u2 = u * u;
    const double u3 = u2 * u;
    auto blend = [&](double a, double b, double c, double d) {
        return 0.5 * (2.0 * b + (-a + c) * u + (2.0 * a - 5.0 * b + 4.0 * c - d) * u2 +
                      (-a + 3.0 * b - 3.0 * c + d) * u3);
    };
    return {blend(p0.row, p1.row, p2.row, p3.row), blend(p0.col, p1.col, p2.col, p3.col)};
}

void draw_filaments(Image& img, CounterRng& rng) {
    const int h = img.height();
    const int w = img.width();
    const int count = std::max(2, h * w / 700);
    const double side = std::min(h, w);
    for (int f = 0; f < count; ++f) {
        std::vector<Point> pts{{rng.uniform(0.0, h), rng.uniform(0.0, w)}};
        double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const int segments = 3 + static_cast<int>(rng.below(4));
        for (int s = 0; s < segments; ++s) {
            const double len = rng.uniform(0.15, 0.3) * side;
            angle += 0.35 * rng.normal();
            const Point& last = pts.back();
            pts.push_back({last.row + len * std::sin(angle), last.col + len * std::cos(angle)});
        }
        render_polyline(img, pts, rng.uniform(0.5, 0.9), rng.uniform(0.6, 1.0));
    }
}

void draw_pits(Image& img, CounterRng& rng) {
    const int h = img.height();
    const int w = img.width();
    const int count = std::max(3, h * w / 350);
    for (int p = 0; p < count; ++p) {
        const Point centre{rng.uniform(0.0, h), rng.uniform(0.0, w)};
        render_ring(img, centre, rng.uniform(1.5, 3.5), rng.uniform(0.45, 0.7),
                    rng.uniform(0.5, 1.0));
    }
}

void draw_curves(Image& img, CounterRng& rng) {
    const int h = img.height();
    const int w = img.width();
    const int count = std::max(2, h * w / 2500);
    const double side = std::min(h, w);
    for (int k = 0; k < count; ++k) {
        std::vector<Point> ctrl{{rng.uniform(0.0, h), rng.uniform(0.0, w)}};
        double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int i = 0; i < 5; ++i) {
            const double len = rng.uniform(0.2, 0.35) * side;
            angle += 0.8 * rng.normal();
            const Point& last = ctrl.back();
            ctrl.push_back({last.row + len * std::sin(angle), last.col + len * std::cos(angle)});
        }
        std::vector<Point> pts;
        constexpr int kSubdivisions = 12;
        for (std::size_t i = 1; i + 2 < ctrl.size(); ++i) {
            for (int j = 0; j < kSubdivisions; ++j) {
                pts.push_back(catmull_rom(ctrl[i - 1], ctrl[i], ctrl[i + 1], ctrl[i + 2],
                                          static_cast<double>(j) / kSubdivisions));
            }
        }
        pts.push_back(ctrl[ctrl.size() - 2]);
        render_polyline(img, pts, rng.uniform(0.7, 1.3), rng.uniform(0.6, 1.0));
    }
}

int mirror(int i, int n) {
    const int period = 2 * n;
    i %= period;
    if (i < 0) {
        i += period;
    }
    return i < n ? i : period - 1 - i;
}

nlohmann::json spec_to_json(const DegradationSpec& s) {
    return {{"psf_sigma", s.psf_sigma}, {"gain", s.gain}, {"read_sigma", s.read_sigma}};
}

DegradationSpec spec_from_json(const nlohmann::json& j) {
    DegradationSpec s;
    s.psf_sigma = j.at("psf_sigma").get<double>();
    s.gain = j.at("gain").get<double>();
    s.read_sigma = j.at("read_sigma").get<double>();
    return s;
}

std::string pair_stem(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04zu", index);
    return buf;
}

} // namespace

std::string_view to_string(StructureKind kind) {
    switch (kind) {
    case StructureKind::filaments:
        return "filaments";
    case StructureKind::pits:
        return "pits";
    case StructureKind::curves:
        return "curves";
    }
    return "unknown";
}

StructureKind parse_structure_kind(std::string_view name) {
    if (name == "filaments") {
        return StructureKind::filaments;
    }
    if (name == "pits") {
        return StructureKind::pits;
    }
    if (name == "curves") {
        return StructureKind::curves;
    }
    throw std::invalid_argument("unknown structure kind '" + std::string(name) +
                                "' (expected filaments, pits or curves)");
}

void DegradationSpec::validate() const {
    if (!(std::isfinite(psf_sigma) && psf_sigma > 0.0)) {
        throw std::invalid_argument("DegradationSpec: psf_sigma must be finite and > 0");
    }
    if (!(std::isfinite(gain) && gain > 0.0)) {
        throw std::invalid_argument("DegradationSpec: gain must be finite and > 0");
    }
    if (!(std::isfinite(read_sigma) && read_sigma >= 0.0)) {
        throw std::invalid_argument("DegradationSpec: read_sigma must be finite and >= 0");
    }
}

Structure gen_structure(StructureKind kind, int height, int width, std::uint64_t seed) {
    if (height < kMinStructureSide || width < kMinStructureSide) {
        throw std::invalid_argument("gen_structure: dimensions must be at least " +
                                    std::to_string(kMinStructureSide) + "x" +
                                    std::to_string(kMinStructureSide));
    }
    Structure s{Image(height, width), kind, seed};
    CounterRng rng(derive_seed(seed, {static_cast<std::uint64_t>(kind)}));
    switch (kind) {
    case StructureKind::filaments:
        draw_filaments(s.pixels, rng);
        break;
    case StructureKind::pits:
        draw_pits(s.pixels, rng);
        break;
    case StructureKind::curves:
        draw_curves(s.pixels, rng);
        break;
    }
    const double peak = max_value(s.pixels);
    if (peak > 0.0) {
        for (float& v : s.pixels.pixels()) {
            v = static_cast<float>(v / peak);
        }
    }
    return s;
}

int kernel_radius(double sigma) { return static_cast<int>(std::ceil(4.0 * sigma)); }

std::vector<double> gaussian_kernel(double sigma) {
    if (!(std::isfinite(sigma) && sigma > 0.0)) {
        throw std::invalid_argument("gaussian_kernel: sigma must be finite and > 0");
    }
    const int radius = kernel_radius(sigma);
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        taps[k + radius] = std::exp(-0.5 * k * k / (sigma * sigma));
        total += taps[k + radius];
    }
    for (double& t : taps) {
        t /= total;
    }
    return taps;
}

Image gaussian_blur(const Image& img, double sigma) {
    const std::vector<double> taps = gaussian_kernel(sigma);
    const int radius = static_cast<int>(taps.size() / 2);
    const int h = img.height();
    const int w = img.width();
    std::vector<double> rows(img.size());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[k + radius] * img(r, mirror(c + k, w));
            }
            rows[static_cast<std::size_t>(r) * w + c] = acc;
        }
    }
    Image out(h, w);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k) {
                acc += taps[k + radius] * rows[static_cast<std::size_t>(mirror(r + k, h)) * w + c];
            }
            out(r, c) = static_cast<float>(acc);
        }
    }
    return out;
}

Image add_noise(const Image& blurred, const DegradationSpec& spec, std::uint64_t noise_seed) {
    spec.validate();
    Image out(blurred.height(), blurred.width());
    for (std::size_t i = 0; i < blurred.size(); ++i) {
        CounterRng rng(derive_seed(noise_seed, {i}));
        const double lambda = spec.gain * std::max(0.0, static_cast<double>(blurred.data()[i]));
        double v = 0.0;
        if (lambda > 0.0) {
            std::poisson_distribution<long long> poisson(lambda);
            v = static_cast<double>(poisson(rng)) / spec.gain;
        }
        if (spec.read_sigma > 0.0) {
            v += spec.read_sigma * normal_at(derive_seed(noise_seed, {i, 1}), 0);
        }
        out.data()[i] = static_cast<float>(v);
    }
    return out;
}

Image degrade(const Structure& s, const DegradationSpec& spec, std::uint64_t noise_seed) {
    spec.validate();
    return add_noise(gaussian_blur(s.pixels, spec.psf_sigma), spec, noise_seed);
}

NormConstants compute_norm_constants(const std::vector<PairedSample>& pairs) {
    double sum = 0.0;
    double count = 0.0;
    for (const PairedSample& p : pairs) {
        for (const Image* img : {&p.lr, &p.hr}) {
            for (float v : img->pixels()) {
                sum += v;
            }
            count += static_cast<double>(img->size());
        }
    }
    if (count == 0.0) {
        throw std::invalid_argument("compute_norm_constants: no pixels");
    }
    const double mu = sum / count;
    double sq = 0.0;
    for (const PairedSample& p : pairs) {
        for (const Image* img : {&p.lr, &p.hr}) {
            for (float v : img->pixels()) {
                sq += (v - mu) * (v - mu);
            }
        }
    }
    const double sd = std::sqrt(sq / count);
    return {mu, sd > 0.0 ? sd : 1.0};
}

Dataset make_dataset(const DatasetSpec& spec) {
    spec.lr.validate();
    spec.hr.validate();
    if (spec.n_pairs < 1) {
        throw std::invalid_argument("make_dataset: n_pairs must be >= 1");
    }
    if (spec.patch < 1) {
        throw std::invalid_argument("make_dataset: patch must be >= 1");
    }
    if (!(spec.hr.psf_sigma < spec.lr.psf_sigma)) {
        throw std::invalid_argument("make_dataset: HR psf_sigma must be smaller than LR psf_sigma");
    }
    const int side = spec.structure_side > 0 ? spec.structure_side
                                             : std::max(2 * spec.patch, kMinStructureSide);
    if (spec.patch > side) {
        throw std::invalid_argument("make_dataset: patch larger than structure side");
    }
    const int per_axis = side / spec.patch;
    const int per_structure = per_axis * per_axis;

    Dataset ds;
    ds.spec = spec;
    ds.spec.structure_side = side;
    int structure_index = -1;
    Image lr_full;
    Image hr_full;
    PairRecord base;
    for (int i = 0; i < spec.n_pairs; ++i) {
        if (i / per_structure != structure_index) {
            structure_index = i / per_structure;
            const auto j = static_cast<std::uint64_t>(structure_index);
            base.structure_seed = derive_seed(spec.seed, {1, j});
            base.lr_noise_seed = derive_seed(spec.seed, {2, j});
            base.hr_noise_seed = derive_seed(spec.seed, {3, j});
            const Structure s = gen_structure(spec.kind, side, side, base.structure_seed);
            lr_full = degrade(s, spec.lr, base.lr_noise_seed);
            hr_full = degrade(s, spec.hr, base.hr_noise_seed);
        }
        const int k = i % per_structure;
        PairRecord rec = base;
        rec.crop_row = (k / per_axis) * spec.patch;
        rec.crop_col = (k % per_axis) * spec.patch;
        ds.pairs.push_back({lr_full.crop(rec.crop_row, rec.crop_col, spec.patch, spec.patch),
                            hr_full.crop(rec.crop_row, rec.crop_col, spec.patch, spec.patch),
                            rec.structure_seed});
        ds.records.push_back(rec);
    }
    ds.norm = compute_norm_constants(ds.pairs);
    return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir / "pairs", ec);
    if (ec) {
        throw IoError(dir, "cannot create dataset directory: " + ec.message());
    }
    nlohmann::json records = nlohmann::json::array();
    for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
        const std::string stem = pair_stem(i);
        write_f32img(dir / "pairs" / (stem + "_lr.f32img"), dataset.pairs[i].lr);
        write_f32img(dir / "pairs" / (stem + "_hr.f32img"), dataset.pairs[i].hr);
        const PairRecord& r = i < dataset.records.size() ? dataset.records[i] : PairRecord{};
        records.push_back({{"index", i},
                           {"structure_seed", r.structure_seed},
                           {"lr_noise_seed", r.lr_noise_seed},
                           {"hr_noise_seed", r.hr_noise_seed},
                           {"crop", {r.crop_row, r.crop_col}}});
    }
    const DatasetSpec& s = dataset.spec;
    nlohmann::json manifest = {
        {"format", "resmatch-dataset"},
        {"version", 1},
        {"count", dataset.pairs.size()},
        {"kind", std::string(to_string(s.kind))},
        {"patch", s.patch},
        {"structure_side", s.structure_side},
        {"seed", s.seed},
        {"lr_spec", spec_to_json(s.lr)},
        {"hr_spec", spec_to_json(s.hr)},
        {"normalization", {{"mean", dataset.norm.mean}, {"std", dataset.norm.std}}},
        {"pairs", records},
    };
    write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path, std::string("invalid manifest: ") + e.what());
    }
    Dataset ds;
    try {
        if (manifest.at("format").get<std::string>() != "resmatch-dataset") {
            throw FormatError(manifest_path, "not a resmatch dataset manifest");
        }
        if (manifest.at("version").get<int>() != 1) {
            throw FormatError(manifest_path, "unsupported dataset version");
        }
        ds.spec.n_pairs = manifest.at("count").get<int>();
        ds.spec.kind = parse_structure_kind(manifest.at("kind").get<std::string>());
        ds.spec.patch = manifest.at("patch").get<int>();
        ds.spec.structure_side = manifest.at("structure_side").get<int>();
        ds.spec.seed = manifest.at("seed").get<std::uint64_t>();
        ds.spec.lr = spec_from_json(manifest.at("lr_spec"));
        ds.spec.hr = spec_from_json(manifest.at("hr_spec"));
        ds.norm.mean = manifest.at("normalization").at("mean").get<double>();
        ds.norm.std = manifest.at("normalization").at("std").get<double>();
        for (const auto& r : manifest.at("pairs")) {
            PairRecord rec;
            rec.structure_seed = r.at("structure_seed").get<std::uint64_t>();
            rec.lr_noise_seed = r.at("lr_noise_seed").get<std::uint64_t>();
            rec.hr_noise_seed = r.at("hr_noise_seed").get<std::uint64_t>();
            rec.crop_row = r.at("crop").at(0).get<int>();
            rec.crop_col = r.at("crop").at(1).get<int>();
            ds.records.push_back(rec);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(manifest_path, std::string("invalid manifest: ") + e.what());
    }
    if (ds.records.size() != static_cast<std::size_t>(ds.spec.n_pairs)) {
        throw FormatError(manifest_path, "pair records do not match count");
    }
    for (int i = 0; i < ds.spec.n_pairs; ++i) {
        const std::string stem = pair_stem(static_cast<std::size_t>(i));
        PairedSample p{read_f32img(dir / "pairs" / (stem + "_lr.f32img")),
                       read_f32img(dir / "pairs" / (stem + "_hr.f32img")),
                       ds.records[i].structure_seed};
        if (!p.lr.same_shape(p.hr)) {
            throw FormatError(dir / "pairs" / (stem + "_lr.f32img"), "LR/HR shape mismatch");
        }
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

} // namespace resmatch::datagen
