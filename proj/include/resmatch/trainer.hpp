#pragma once

#include "resmatch/datagen.hpp"
#include "resmatch/flow_core.hpp"
#include "resmatch/velocity_model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

namespace resmatch::trainer {

struct TrainConfig {
    int T = 20;
    double lr = 1e-4;
    int batch_size = 8;
    int max_steps = 1000;
    int patch = 64; ///< random crop side taken from each pair
    std::uint64_t seed = 0;
    int val_every = 500;
    bool flips = true;
    model::OptimizerKind optimizer = model::OptimizerKind::adam;
    int threads = 1;

    void validate() const;
};

struct TrainLogEntry {
    std::int64_t step = 0;
    double loss = 0.0;
    double wall_ms = 0.0;
    std::optional<double> val_psnr;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;

    /// Mean loss over entries with first <= step <= last.
    double mean_loss(std::int64_t first, std::int64_t last) const;
};

struct TrainOptions {
    /// When set, writes step_NNNNNN.resm every val_every steps and final.resm.
    std::filesystem::path checkpoint_dir;
    /// Pairs scored by single-sample PSNR at each validation step.
    const std::vector<datagen::PairedSample>* validation = nullptr;
    std::function<void(const TrainLogEntry&)> on_step;
};

struct TrainResult {
    model::ModelParams params;
    model::OptimizerState optimizer;
    TrainLog log;
    std::int64_t step = 0;
};

/// Builds the training tuple for sample `index` of optimisation step `step`:
/// pair, crop and flips, t on the grid, x0 ~ N(0, I), x_t on the path.
/// Inputs must already be normalised.
flow::FlowBatch draw_sample(const std::vector<datagen::PairedSample>& normalized,
                            const TrainConfig& config, std::int64_t step, int index);

TrainResult train(const std::vector<datagen::PairedSample>& dataset, const TrainConfig& config,
                  const model::ArchConfig& arch, const TrainOptions& options = {});

/// Continues from a checkpoint's parameters, optimizer moments and step
/// count. Refuses checkpoints whose architecture differs from `arch` or that
/// lack optimizer state.
TrainResult resume(const std::filesystem::path& checkpoint,
                   const std::vector<datagen::PairedSample>& dataset, const TrainConfig& config,
                   const model::ArchConfig& arch, const TrainOptions& options = {});

/// Mean single-sample PSNR of `params` over `pairs`.
double validation_psnr(const model::ModelParams& params,
                       const std::vector<datagen::PairedSample>& pairs, int T, std::uint64_t seed);

/// `step,loss,wall_ms,val_psnr`; val_psnr empty where not evaluated.
void write_train_log(const std::filesystem::path& path, const TrainLog& log);

} // namespace resmatch::trainer
