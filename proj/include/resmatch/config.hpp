#pragma once

#include "resmatch/datagen.hpp"
#include "resmatch/trainer.hpp"
#include "resmatch/velocity_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace resmatch::config {

struct DatasetEntry {
    std::string name;
    std::filesystem::path out;
    datagen::DatasetSpec spec;
};

struct TrainSection {
    std::filesystem::path dataset;
    std::optional<std::filesystem::path> validation;
    std::filesystem::path out;
    std::optional<std::filesystem::path> resume;
    trainer::TrainConfig train;
};

struct InferSection {
    std::filesystem::path checkpoint;
    std::filesystem::path input;
    std::filesystem::path out;
    int T = 20;
    int tile = 128;
    int core = 64;
    bool png = false;
};

struct SampleSection {
    std::filesystem::path checkpoint;
    std::filesystem::path input;
    std::filesystem::path out;
    int T = 20;
    int K = 50;
    int tile = 128;
    int core = 64;
    bool save_members = true;
    bool png = false;
};

struct EvalSection {
    std::filesystem::path predictions;
    std::filesystem::path ground_truth;
    std::filesystem::path out;
    std::optional<double> data_range;
    int ms_ssim_scales = 3;
};

struct CalibrateSection {
    std::filesystem::path ensembles;
    std::filesystem::path ground_truth;
    std::filesystem::path out;
};

struct RunConfig {
    std::filesystem::path base_dir; ///< relative paths resolve against this
    std::uint64_t seed = 0;
    int threads = 1;
    std::vector<DatasetEntry> datasets;
    model::ArchConfig arch;
    TrainSection train;
    InferSection infer;
    SampleSection sample;
    EvalSection eval;
    CalibrateSection calibrate;
};

/// Parses a config document. Unknown keys and wrong types raise ConfigError
/// naming the offending key path (e.g. `train.lr`).
RunConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

/// Command-line --seed / --threads take precedence over the file.
void apply_overrides(RunConfig& cfg, std::optional<std::uint64_t> seed, std::optional<int> threads);

/// Reads and parses a JSON file; syntax errors report line and column.
RunConfig load_config(const std::filesystem::path& path);

} // namespace resmatch::config
