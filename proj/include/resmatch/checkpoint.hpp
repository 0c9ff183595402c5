#pragma once

#include "resmatch/velocity_model.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>

namespace resmatch::model {

/// File layout: magic "RESMATCH", uint32 LE format version, uint32 LE JSON
/// header length, JSON header, then one record per array (uint32 name
/// length, name bytes, uint32 rank, rank x uint32 dims, float32 LE values).
/// Parameters come first in declaration order, followed by the Adam first
/// and second moments when the header's optimizer.has_state flag is set.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    ModelParams model;
    std::optional<OptimizerState> optimizer;
    std::int64_t step = 0;
    std::uint64_t train_seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Validates the complete file before returning; nothing is partially loaded.
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace resmatch::model
