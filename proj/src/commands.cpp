#include "resmatch/commands.hpp"

#include "resmatch/checkpoint.hpp"
#include "resmatch/datagen.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"
#include "resmatch/parallel.hpp"
#include "resmatch/rng.hpp"
#include "resmatch/tiling.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <map>
#include <ostream>

namespace resmatch::commands {
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d70;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError(dir, "cannot create directory");
    }
}

void require_set(const fs::path& p, const std::string& key) {
    if (p.empty()) {
        throw ConfigError(key + ": required");
    }
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h = (h ^ c) * 0x100000001b3ULL;
    }
    return h;
}

std::string member_name(int k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%03d.f32img", k);
    return buf;
}

std::map<std::string, Image> by_id(std::vector<NamedImage> images) {
    std::map<std::string, Image> out;
    for (auto& n : images) {
        out.emplace(n.id, std::move(n.image));
    }
    return out;
}

std::uint64_t sampling_seed(const config::RunConfig& cfg, const std::string& id) {
    return image_seed(derive_seed(cfg.seed, {kSampleStream}), id);
}

void write_prediction(const fs::path& path, const Image& img, bool png) {
    write_f32img(path, img);
    if (png) {
        fs::path p = path;
        write_png16(p.replace_extension(".png"), img);
    }
}

} // namespace

std::vector<NamedImage> load_images(const fs::path& source, Role role) {
    if (!fs::exists(source)) {
        throw IoError(source, "not found");
    }
    std::vector<NamedImage> out;
    if (fs::is_regular_file(source)) {
        out.push_back({source.stem().string(), read_f32img(source)});
        return out;
    }
    if (fs::exists(source / "manifest.json")) {
        datagen::Dataset ds = datagen::load_dataset(source);
        for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
            char id[16];
            std::snprintf(id, sizeof(id), "%04zu", i);
            out.push_back({id, role == Role::input ? std::move(ds.pairs[i].lr) : std::move(ds.pairs[i].hr)});
        }
        return out;
    }
    std::vector<fs::path> files;
    std::vector<fs::path> ensembles;
    for (const auto& entry : fs::directory_iterator(source)) {
        if (entry.is_regular_file() && entry.path().extension() == ".f32img") {
            files.push_back(entry.path());
        } else if (entry.is_directory() && fs::exists(entry.path() / "mmse.f32img")) {
            ensembles.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    std::sort(ensembles.begin(), ensembles.end());
    for (const auto& f : files) {
        out.push_back({f.stem().string(), read_f32img(f)});
    }
    if (out.empty()) {
        for (const auto& d : ensembles) {
            out.push_back({d.filename().string(), read_f32img(d / "mmse.f32img")});
        }
    }
    if (out.empty()) {
        throw FormatError(source, "no images found (expected a dataset, .f32img files or ensembles)");
    }
    return out;
}

std::uint64_t image_seed(std::uint64_t run_seed, const std::string& id) {
    return derive_seed(run_seed, {0x696d67ULL, fnv1a(id)});
}

Image predict(const model::ModelParams& params, const Image& input, int T, int tile, int core,
              std::uint64_t seed, int threads) {
    if (input.height() <= tile && input.width() <= tile) {
        return sampler::euler_integrate(params, input, T, tiling::tile_seed(seed, {0, 0}));
    }
    const tiling::TileGrid grid = tiling::plan_tiles(input.height(), input.width(), tile, core);
    const auto op = [&](const Image& t, std::uint64_t s) {
        return sampler::euler_integrate(params, t, T, s);
    };
    return tiling::tiled_apply(op, input, grid, seed, threads);
}

sampler::PosteriorEnsemble predict_ensemble(const model::ModelParams& params, const Image& input,
                                            int T, int K, int tile, int core, std::uint64_t seed,
                                            int threads) {
    if (K < 1) {
        throw std::invalid_argument("predict_ensemble: K must be >= 1");
    }
    sampler::PosteriorEnsemble e;
    e.samples.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        e.base_seeds.push_back(sampler::member_seed(seed, k));
    }
    parallel_for(e.samples.size(), threads, [&](std::size_t k) {
        e.samples[k] = predict(params, input, T, tile, core, e.base_seeds[k], 1);
    });
    sampler::finalize_statistics(e);
    return e;
}

void cmd_gen_data(const config::RunConfig& cfg, std::ostream& log) {
    if (cfg.datasets.empty()) {
        throw ConfigError("datasets: no datasets configured");
    }
    for (const auto& entry : cfg.datasets) {
        const datagen::Dataset ds = datagen::make_dataset(entry.spec);
        datagen::save_dataset(entry.out, ds);
        log << "gen-data: " << entry.name << " " << ds.pairs.size() << " pairs -> "
            << entry.out.string() << "\n";
    }
}

trainer::TrainResult cmd_train(const config::RunConfig& cfg, std::ostream& log) {
    const auto& t = cfg.train;
    require_set(t.dataset, "train.dataset");
    const datagen::Dataset ds = datagen::load_dataset(t.dataset);
    std::optional<datagen::Dataset> val;
    if (t.validation) {
        val = datagen::load_dataset(*t.validation);
    }
    ensure_dir(t.out);
    trainer::TrainOptions opts;
    opts.checkpoint_dir = t.out;
    if (val) {
        opts.validation = &val->pairs;
    }
    const int every = std::max(1, t.train.max_steps / 20);
    opts.on_step = [&](const trainer::TrainLogEntry& e) {
        if (e.step % every == 0 || e.val_psnr) {
            log << "train: step " << e.step << " loss " << e.loss;
            if (e.val_psnr) {
                log << " val_psnr " << *e.val_psnr;
            }
            log << "\n";
        }
    };
    trainer::TrainResult r = t.resume
                                 ? trainer::resume(*t.resume, ds.pairs, t.train, cfg.arch, opts)
                                 : trainer::train(ds.pairs, t.train, cfg.arch, opts);
    trainer::write_train_log(t.out / "train_log.csv", r.log);
    log << "train: " << r.step << " steps -> " << (t.out / "final.resm").string() << "\n";
    return r;
}

void cmd_infer(const config::RunConfig& cfg, std::ostream& log) {
    const auto& s = cfg.infer;
    require_set(s.input, "infer.input");
    const model::Checkpoint ckpt = model::load_checkpoint(s.checkpoint);
    const auto inputs = load_images(s.input, Role::input);
    ensure_dir(s.out);
    for (const auto& in : inputs) {
        const std::uint64_t seed = sampler::member_seed(sampling_seed(cfg, in.id), 0);
        const Image pred = predict(ckpt.model, in.image, s.T, s.tile, s.core, seed, cfg.threads);
        write_prediction(s.out / (in.id + ".f32img"), pred, s.png);
    }
    log << "infer: " << inputs.size() << " images -> " << s.out.string() << "\n";
}

void cmd_sample(const config::RunConfig& cfg, std::ostream& log) {
    const auto& s = cfg.sample;
    require_set(s.input, "sample.input");
    const model::Checkpoint ckpt = model::load_checkpoint(s.checkpoint);
    const auto inputs = load_images(s.input, Role::input);
    ensure_dir(s.out);
    for (const auto& in : inputs) {
        const auto e = predict_ensemble(ckpt.model, in.image, s.T, s.K, s.tile, s.core,
                                        sampling_seed(cfg, in.id), cfg.threads);
        const fs::path dir = s.out / in.id;
        ensure_dir(dir);
        write_prediction(dir / "mmse.f32img", e.mean, s.png);
        if (e.pixel_std) {
            write_prediction(dir / "pixel_std.f32img", *e.pixel_std, s.png);
        }
        if (s.save_members) {
            ensure_dir(dir / "members");
            for (int k = 0; k < e.K; ++k) {
                write_f32img(dir / "members" / member_name(k), e.samples[static_cast<std::size_t>(k)]);
            }
        }
        const nlohmann::json meta = {{"id", in.id}, {"K", e.K}, {"T", s.T}, {"tile", s.tile},
                                     {"core", s.core}, {"seed", sampling_seed(cfg, in.id)}};
        write_file_atomic(dir / "ensemble.json", meta.dump(2) + "\n");
    }
    log << "sample: " << inputs.size() << " images x K=" << s.K << " -> " << s.out.string() << "\n";
}

metrics::MetricReport cmd_eval(const config::RunConfig& cfg, std::ostream& log) {
    const auto& s = cfg.eval;
    require_set(s.predictions, "eval.predictions");
    require_set(s.ground_truth, "eval.ground_truth");
    const auto preds = load_images(s.predictions, Role::input);
    const auto gt = by_id(load_images(s.ground_truth, Role::target));
    if (preds.size() != gt.size()) {
        throw std::invalid_argument("eval: " + std::to_string(preds.size()) + " predictions but " +
                                    std::to_string(gt.size()) + " ground-truth images");
    }
    std::vector<metrics::MetricRow> rows;
    for (const auto& p : preds) {
        const auto it = gt.find(p.id);
        if (it == gt.end()) {
            throw std::invalid_argument("eval: no ground truth for image '" + p.id + "'");
        }
        try {
            rows.push_back(metrics::evaluate(p.id, p.image, it->second, s.data_range, s.ms_ssim_scales));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("eval: image '" + p.id + "': " + e.what());
        }
    }
    const metrics::MetricReport report = metrics::summarize(std::move(rows));
    if (!s.out.parent_path().empty()) {
        ensure_dir(s.out.parent_path());
    }
    metrics::write_metrics_csv(s.out, report);
    log << "eval: " << report.rows.size() << " images psnr " << report.psnr.mean << " ssim "
        << report.ssim.mean << " ms_ssim " << report.ms_ssim.mean << " -> " << s.out.string() << "\n";
    return report;
}

calibration::CalibrationFit cmd_calibrate(const config::RunConfig& cfg, std::ostream& log) {
    const auto& s = cfg.calibrate;
    require_set(s.ensembles, "calibrate.ensembles");
    require_set(s.ground_truth, "calibrate.ground_truth");
    if (!fs::is_directory(s.ensembles)) {
        throw IoError(s.ensembles, "not an ensemble directory");
    }
    const auto gt = by_id(load_images(s.ground_truth, Role::target));
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(s.ensembles)) {
        if (entry.is_directory() && fs::exists(entry.path() / "mmse.f32img")) {
            dirs.push_back(entry.path());
        }
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw FormatError(s.ensembles, "no ensembles found");
    }
    std::vector<calibration::CalibrationPoint> points;
    for (const auto& d : dirs) {
        const std::string id = d.filename().string();
        const auto it = gt.find(id);
        if (it == gt.end()) {
            throw std::invalid_argument("calibrate: no ground truth for image '" + id + "'");
        }
        if (!fs::exists(d / "pixel_std.f32img")) {
            throw FormatError(d, "ensemble has no pixel_std (K < 2)");
        }
        points.push_back(calibration::make_point(id, read_f32img(d / "mmse.f32img"),
                                                 read_f32img(d / "pixel_std.f32img"), it->second));
    }
    const calibration::CalibrationFit fit = calibration::fit_linear(std::move(points));
    if (!s.out.parent_path().empty()) {
        ensure_dir(s.out.parent_path());
    }
    calibration::reliability_export(fit, s.out);
    log << "calibrate: " << fit.points.size() << " images alpha " << fit.alpha << " beta "
        << fit.beta << " r2 " << fit.r2 << " -> " << s.out.string() << "\n";
    return fit;
}

} // namespace resmatch::commands
