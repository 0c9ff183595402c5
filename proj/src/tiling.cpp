#include "resmatch/tiling.hpp"

#include "resmatch/parallel.hpp"
#include "resmatch/rng.hpp"

#include <stdexcept>
#include <string>

namespace resmatch::tiling {
namespace {

std::vector<int> axis_origins(int extent, int tile, int core) {
    std::vector<int> out;
    for (int o = 0; o + tile <= extent; o += core) {
        out.push_back(o);
    }
    if (out.back() + tile < extent) {
        out.push_back(extent - tile);
    }
    return out;
}

std::vector<int> axis_bounds(const std::vector<int>& origins, int extent, int tile) {
    std::vector<int> bounds{0};
    for (std::size_t i = 0; i + 1 < origins.size(); ++i) {
        // Midpoint between the two tile centres.
        bounds.push_back((origins[i] + origins[i + 1] + tile) / 2);
    }
    bounds.push_back(extent);
    return bounds;
}

} // namespace

Rect TileGrid::assigned(std::size_t index) const {
    const std::size_t r = index / col_origins.size();
    const std::size_t c = index % col_origins.size();
    return {row_bounds[r], col_bounds[c], row_bounds[r + 1], col_bounds[c + 1]};
}

TileGrid plan_tiles(int height, int width, int tile, int core) {
    if (tile < 1 || core < 1) {
        throw std::invalid_argument("plan_tiles: tile and core must be positive");
    }
    if (tile > height || tile > width) {
        throw std::invalid_argument("plan_tiles: tile " + std::to_string(tile) +
                                    " larger than image " + std::to_string(height) + "x" +
                                    std::to_string(width));
    }
    if (core > tile) {
        throw std::invalid_argument("plan_tiles: core larger than tile");
    }
    if ((tile - core) % 2 != 0) {
        throw std::invalid_argument("plan_tiles: tile - core must be even");
    }
    TileGrid g;
    g.height = height;
    g.width = width;
    g.tile = tile;
    g.core = core;
    g.row_origins = axis_origins(height, tile, core);
    g.col_origins = axis_origins(width, tile, core);
    g.row_bounds = axis_bounds(g.row_origins, height, tile);
    g.col_bounds = axis_bounds(g.col_origins, width, tile);
    for (int r : g.row_origins) {
        for (int c : g.col_origins) {
            g.origins.push_back({r, c});
        }
    }
    return g;
}

std::uint64_t tile_seed(std::uint64_t base_seed, TileOrigin origin) {
    return derive_seed(base_seed, {0xa54ff53aULL, static_cast<std::uint64_t>(origin.row),
                                   static_cast<std::uint64_t>(origin.col)});
}

Image tiled_apply(const TileOp& op, const Image& image, const TileGrid& grid,
                  std::uint64_t base_seed, int threads) {
    if (image.height() != grid.height || image.width() != grid.width) {
        throw std::invalid_argument("tiled_apply: image does not match tile plan");
    }
    Image out(image.height(), image.width());
    parallel_for(grid.size(), threads, [&](std::size_t i) {
        const TileOrigin o = grid.origins[i];
        const Image tile = image.crop(o.row, o.col, grid.tile, grid.tile);
        const Image result = op(tile, tile_seed(base_seed, o));
        if (!result.same_shape(tile)) {
            throw std::runtime_error("tiled_apply: operator changed the shape of tile at (" +
                                     std::to_string(o.row) + ", " + std::to_string(o.col) + ")");
        }
        const Rect a = grid.assigned(i);
        for (int r = a.row0; r < a.row1; ++r) {
            for (int c = a.col0; c < a.col1; ++c) {
                out(r, c) = result(r - o.row, c - o.col);
            }
        }
    });
    return out;
}

} // namespace resmatch::tiling
