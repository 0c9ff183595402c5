#include "resmatch/trainer.hpp"

#include "resmatch/checkpoint.hpp"
#include "resmatch/errors.hpp"
#include "resmatch/io.hpp"
#include "resmatch/metrics.hpp"
#include "resmatch/rng.hpp"
#include "resmatch/sampler.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace resmatch::trainer {
namespace {

Image flip(const Image& img, bool horizontal, bool vertical) {
    if (!horizontal && !vertical) {
        return img;
    }
    Image out(img.height(), img.width());
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            out(r, c) = img(vertical ? img.height() - 1 - r : r, horizontal ? img.width() - 1 - c : c);
        }
    }
    return out;
}

std::vector<datagen::PairedSample> normalized_copy(const std::vector<datagen::PairedSample>& pairs,
                                                   const NormConstants& norm) {
    std::vector<datagen::PairedSample> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back({normalize(p.lr, norm), normalize(p.hr, norm), p.structure_seed});
    }
    return out;
}

void check_dataset(const std::vector<datagen::PairedSample>& dataset, const TrainConfig& config) {
    if (dataset.empty()) {
        throw std::invalid_argument("train: dataset is empty");
    }
    for (const auto& p : dataset) {
        if (!p.lr.same_shape(p.hr)) {
            throw std::invalid_argument("train: LR/HR shape mismatch in dataset");
        }
        if (p.lr.height() < config.patch || p.lr.width() < config.patch) {
            throw std::invalid_argument("train: pair smaller than training patch " +
                                        std::to_string(config.patch));
        }
    }
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_checkpoint(const TrainOptions& options, const std::string& name,
                      const TrainResult& state, const TrainConfig& config) {
    if (options.checkpoint_dir.empty()) {
        return;
    }
    std::filesystem::create_directories(options.checkpoint_dir);
    model::save_checkpoint(options.checkpoint_dir / name,
                           {state.params, state.optimizer, state.step, config.seed});
}

std::string step_name(std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "step_%06lld.resm", static_cast<long long>(step));
    return buf;
}

void run_loop(TrainResult& state, const std::vector<datagen::PairedSample>& dataset,
              const TrainConfig& config, const TrainOptions& options) {
    const auto normalized = normalized_copy(dataset, state.params.norm);
    const auto start = std::chrono::steady_clock::now();
    std::vector<flow::FlowBatch> batch(static_cast<std::size_t>(config.batch_size));
    while (state.step < config.max_steps) {
        const std::int64_t step = state.step + 1;
        for (int b = 0; b < config.batch_size; ++b) {
            batch[static_cast<std::size_t>(b)] = draw_sample(normalized, config, step, b);
        }
        const model::LossAndGrad lg = model::loss_and_grad(state.params, batch, config.threads);
        if (!std::isfinite(lg.loss)) {
            throw NumericalError("training diverged: step=" + std::to_string(step) +
                                 " lr=" + fmt(config.lr) + " loss=" + fmt(lg.loss));
        }
        model::apply_update(state.params.params, lg.grads, state.optimizer, config.lr);
        state.step = step;

        TrainLogEntry entry;
        entry.step = step;
        entry.loss = lg.loss;
        entry.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
        if (config.val_every > 0 && step % config.val_every == 0) {
            if (options.validation != nullptr && !options.validation->empty()) {
                entry.val_psnr = validation_psnr(state.params, *options.validation, config.T,
                                                 derive_seed(config.seed, {0x76616cULL}));
            }
            write_checkpoint(options, step_name(step), state, config);
        }
        state.log.entries.push_back(entry);
        if (options.on_step) {
            options.on_step(entry);
        }
    }
    write_checkpoint(options, "final.resm", state, config);
}

} // namespace

void TrainConfig::validate() const {
    if (T < 1 || !(lr > 0.0) || batch_size < 1 || max_steps < 0 || patch < 2 || val_every < 0 ||
        threads < 1) {
        throw std::invalid_argument(
            "TrainConfig: T, lr, batch_size, patch and threads must be positive; max_steps and "
            "val_every non-negative");
    }
    if (patch % 2 != 0) {
        throw std::invalid_argument("TrainConfig: patch must be even");
    }
}

double TrainLog::mean_loss(std::int64_t first, std::int64_t last) const {
    double sum = 0.0;
    int n = 0;
    for (const auto& e : entries) {
        if (e.step >= first && e.step <= last) {
            sum += e.loss;
            ++n;
        }
    }
    if (n == 0) {
        throw std::invalid_argument("TrainLog::mean_loss: no entries in range");
    }
    return sum / n;
}

flow::FlowBatch draw_sample(const std::vector<datagen::PairedSample>& normalized,
                            const TrainConfig& config, std::int64_t step, int index) {
    const std::uint64_t key = derive_seed(config.seed, {static_cast<std::uint64_t>(step),
                                                        static_cast<std::uint64_t>(index)});
    CounterRng rng(key);
    const auto& pair = normalized[rng.below(normalized.size())];
    const int row = static_cast<int>(rng.below(static_cast<std::uint64_t>(pair.lr.height() - config.patch + 1)));
    const int col = static_cast<int>(rng.below(static_cast<std::uint64_t>(pair.lr.width() - config.patch + 1)));
    const bool hflip = config.flips && (rng() & 1U);
    const bool vflip = config.flips && (rng() & 1U);
    const Image x_m0 = flip(pair.lr.crop(row, col, config.patch, config.patch), hflip, vflip);
    const Image x_m1 = flip(pair.hr.crop(row, col, config.patch, config.patch), hflip, vflip);
    const double t = flow::sample_time({config.T}, derive_seed(key, {1}));
    const Image x0 = flow::gaussian_image(config.patch, config.patch, derive_seed(key, {2}));
    return flow::make_batch(x0, x_m0, x_m1, t);
}

double validation_psnr(const model::ModelParams& params,
                       const std::vector<datagen::PairedSample>& pairs, int T, std::uint64_t seed) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Image pred = sampler::euler_integrate(params, pairs[i].lr, T, derive_seed(seed, {i}));
        sum += metrics::psnr(pred, pairs[i].hr, metrics::default_data_range(pairs[i].hr));
    }
    return sum / static_cast<double>(pairs.size());
}

TrainResult train(const std::vector<datagen::PairedSample>& dataset, const TrainConfig& config,
                  const model::ArchConfig& arch, const TrainOptions& options) {
    config.validate();
    check_dataset(dataset, config);
    TrainResult state;
    state.params = model::init_params(arch, derive_seed(config.seed, {0x696e6974ULL}));
    state.params.norm = datagen::compute_norm_constants(dataset);
    state.optimizer = model::make_optimizer(config.optimizer, state.params.params);
    run_loop(state, dataset, config, options);
    return state;
}

TrainResult resume(const std::filesystem::path& checkpoint,
                   const std::vector<datagen::PairedSample>& dataset, const TrainConfig& config,
                   const model::ArchConfig& arch, const TrainOptions& options) {
    config.validate();
    check_dataset(dataset, config);
    model::Checkpoint ckpt = model::load_checkpoint(checkpoint);
    if (!(ckpt.model.arch == arch)) {
        throw std::invalid_argument("resume: checkpoint " + checkpoint.string() +
                                    " was trained with a different architecture");
    }
    if (!ckpt.optimizer) {
        throw std::invalid_argument("resume: checkpoint " + checkpoint.string() +
                                    " carries no optimizer state");
    }
    if (ckpt.optimizer->kind != config.optimizer) {
        throw std::invalid_argument("resume: optimizer kind differs from checkpoint");
    }
    TrainResult state;
    state.params = std::move(ckpt.model);
    state.optimizer = std::move(*ckpt.optimizer);
    state.step = ckpt.step;
    run_loop(state, dataset, config, options);
    return state;
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
    std::ostringstream out;
    out << "step,loss,wall_ms,val_psnr\n";
    for (const auto& e : log.entries) {
        char ms[32];
        std::snprintf(ms, sizeof(ms), "%.3f", e.wall_ms);
        out << e.step << ',' << fmt(e.loss) << ',' << ms << ',';
        if (e.val_psnr) {
            out << fmt(*e.val_psnr);
        }
        out << '\n';
    }
    write_file_atomic(path, out.str());
}

} // namespace resmatch::trainer
