#include "resmatch/rng.hpp"

#include <cmath>
#include <numbers>

namespace resmatch {

std::uint64_t CounterRng::below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    while (true) {
        const unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * n;
        const auto low = static_cast<std::uint64_t>(m);
        if (low >= n || low >= (0 - n) % n) {
            return static_cast<std::uint64_t>(m >> 64);
        }
    }
}

double CounterRng::normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double normal_at(std::uint64_t key, std::uint64_t index) noexcept {
    const std::uint64_t pair = index >> 1;
    const double u1 = CounterRng::to_open_unit(CounterRng::at(key, 2 * pair));
    const double u2 = CounterRng::to_open_unit(CounterRng::at(key, 2 * pair + 1));
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    return (index & 1) ? radius * std::sin(angle) : radius * std::cos(angle);
}

} // namespace resmatch
