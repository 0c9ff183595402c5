#pragma once

#include "resmatch/image.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace resmatch::tiling {

struct Rect {
    int row0 = 0;
    int col0 = 0;
    int row1 = 0; ///< exclusive
    int col1 = 0; ///< exclusive
};

struct TileOrigin {
    int row = 0;
    int col = 0;
};

/// Overlapping tiles stepped by `core`; final tiles clamped to the image
/// edge. Each output pixel belongs to the tile whose centre is nearest along
/// each axis, so assigned regions partition the image and stay at least
/// (tile - core) / 2 pixels inside their tile except at image borders.
struct TileGrid {
    int height = 0;
    int width = 0;
    int tile = 128;
    int core = 64;
    std::vector<int> row_origins;
    std::vector<int> col_origins;
    std::vector<TileOrigin> origins; ///< row-major over (row_origins x col_origins)

    /// Output pixels written from tile `index`.
    Rect assigned(std::size_t index) const;

    std::size_t size() const noexcept { return origins.size(); }

    // Per-axis ownership boundaries; bounds[i]..bounds[i+1] belongs to tile i.
    std::vector<int> row_bounds;
    std::vector<int> col_bounds;
};

TileGrid plan_tiles(int height, int width, int tile, int core);

using TileOp = std::function<Image(const Image& tile, std::uint64_t tile_seed)>;

/// Seed of the tile at `origin`; independent of iteration order.
std::uint64_t tile_seed(std::uint64_t base_seed, TileOrigin origin);

Image tiled_apply(const TileOp& op, const Image& image, const TileGrid& grid,
                  std::uint64_t base_seed, int threads = 1);

} // namespace resmatch::tiling
