#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace resmatch {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Combines a seed with a path of integer labels into an independent stream key.
constexpr std::uint64_t derive_seed(std::uint64_t seed,
                                    std::initializer_list<std::uint64_t> labels) noexcept {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t label : labels) {
        h = mix64(h ^ mix64(label + 0x632be59bd9b4e019ULL));
    }
    return h;
}

/// Counter-based generator: draw n of stream `key` is mix64(key, n), so any
/// draw can be addressed without replaying its predecessors. Satisfies
/// UniformRandomBitGenerator for use with <random> distributions.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
        : key_(key), counter_(counter) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return at(key_, counter_++); }

    static constexpr result_type at(std::uint64_t key, std::uint64_t counter) noexcept {
        return mix64(key ^ mix64(counter * 0xd1b54a32d192ed03ULL + 1));
    }

    /// Uniform on the open interval (0, 1).
    double uniform() noexcept { return to_open_unit((*this)()); }

    /// Uniform on [lo, hi).
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer on [0, n).
    std::uint64_t below(std::uint64_t n) noexcept;

    double normal() noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

    static constexpr double to_open_unit(std::uint64_t bits) noexcept {
        return (static_cast<double>(bits >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

/// Standard normal value number `index` of stream `key`. Pairs of indices
/// share one Box-Muller transform.
double normal_at(std::uint64_t key, std::uint64_t index) noexcept;

} // namespace resmatch
