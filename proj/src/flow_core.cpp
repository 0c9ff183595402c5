#include "resmatch/flow_core.hpp"

#include "resmatch/rng.hpp"

#include <stdexcept>
#include <string>

namespace resmatch::flow {
namespace {

void require_unit_time(double t, const char* what) {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument(std::string(what) + ": t must lie in [0, 1]");
    }
}

} // namespace

void TimeGrid::validate() const {
    if (steps < 1) {
        throw std::invalid_argument("TimeGrid: T must be >= 1");
    }
}

Image gaussian_image(int height, int width, std::uint64_t seed) {
    Image out(height, width);
    const std::uint64_t key = derive_seed(seed, {0x6a09e667ULL});
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = static_cast<float>(normal_at(key, i));
    }
    return out;
}

Image interpolate(const Image& x0, const Image& x1, double t) {
    require_same_shape(x0, x1, "interpolate");
    require_unit_time(t, "interpolate");
    const auto a = static_cast<float>(1.0 - t);
    const auto b = static_cast<float>(t);
    Image out(x0.height(), x0.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = a * x0.data()[i] + b * x1.data()[i];
    }
    return out;
}

Image sample_path(const Image& x1, double t, std::uint64_t seed) {
    require_unit_time(t, "sample_path");
    return interpolate(gaussian_image(x1.height(), x1.width(), seed), x1, t);
}

Image target_velocity(const Image& x0, const Image& x1) {
    require_same_shape(x0, x1, "target_velocity");
    Image out(x0.height(), x0.width());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data()[i] = x1.data()[i] - x0.data()[i];
    }
    return out;
}

double sample_time(const TimeGrid& grid, std::uint64_t seed) {
    grid.validate();
    CounterRng rng(derive_seed(seed, {0xbb67ae85ULL}));
    const auto index = rng.below(static_cast<std::uint64_t>(grid.steps) + 1);
    return static_cast<double>(index) / grid.steps;
}

double fm_loss(const Image& v_pred, const Image& x0, const Image& x1) {
    require_same_shape(v_pred, x0, "fm_loss");
    require_same_shape(x0, x1, "fm_loss");
    if (v_pred.empty()) {
        throw std::invalid_argument("fm_loss: empty image");
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < v_pred.size(); ++i) {
        const double target = static_cast<double>(x1.data()[i]) - x0.data()[i];
        const double d = v_pred.data()[i] - target;
        sum += d * d;
    }
    return sum / static_cast<double>(v_pred.size());
}

FlowBatch make_batch(const Image& x0, const Image& x_m0, const Image& x_m1, double t) {
    require_same_shape(x0, x_m0, "make_batch");
    require_same_shape(x0, x_m1, "make_batch");
    return {x0, x_m0, x_m1, t, interpolate(x0, x_m1, t)};
}

} // namespace resmatch::flow
