#pragma once

#include "resmatch/image.hpp"

#include <cstdint>

// Conditional flow-matching kernel: straight-line interpolant between a
// Gaussian base draw x0 and the HR target x1, whose conditional path is
// N(t * x1, (1 - t)^2 I) and whose target velocity is x1 - x0.
namespace resmatch::flow {

/// Discrete training/inference time grid {0, 1/T, ..., 1}.
struct TimeGrid {
    int steps = 20;

    double delta() const { return 1.0 / steps; }
    void validate() const;
};

struct FlowBatch {
    Image x0;
    Image x_m0;
    Image x_m1;
    double t = 0.0;
    Image x_t;
};

/// x0 ~ N(0, I), addressable per pixel by seed.
Image gaussian_image(int height, int width, std::uint64_t seed);

Image interpolate(const Image& x0, const Image& x1, double t);

Image sample_path(const Image& x1, double t, std::uint64_t seed);

Image target_velocity(const Image& x0, const Image& x1);

/// Uniform over the T + 1 grid points.
double sample_time(const TimeGrid& grid, std::uint64_t seed);

/// Mean over pixels of (v_pred - (x1 - x0))^2.
double fm_loss(const Image& v_pred, const Image& x0, const Image& x1);

FlowBatch make_batch(const Image& x0, const Image& x_m0, const Image& x_m1, double t);

} // namespace resmatch::flow
