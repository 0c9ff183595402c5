#include "resmatch/sampler.hpp"

#include "resmatch/errors.hpp"
#include "resmatch/flow_core.hpp"
#include "resmatch/parallel.hpp"
#include "resmatch/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace resmatch::sampler {

Image ModelField::velocity(double t, const Image& x, const Image& cond) const {
    return model::forward(params_, t, x, cond);
}

Image euler_integrate(const VelocityField& field, const Image& x_m0, int steps,
                      std::uint64_t base_seed) {
    if (steps < 1) {
        throw std::invalid_argument("euler_integrate: T must be >= 1");
    }
    const NormConstants norm = field.normalization();
    const Image cond = normalize(x_m0, norm);
    Image state = flow::gaussian_image(x_m0.height(), x_m0.width(), base_seed);
    const double delta = 1.0 / steps;
    const auto step_size = static_cast<float>(delta);
    for (int i = 1; i <= steps; ++i) {
        const Image v = field.velocity(delta * (i - 1), state, cond);
        require_same_shape(v, state, "euler_integrate: velocity field output");
        for (std::size_t j = 0; j < state.size(); ++j) {
            state.data()[j] += step_size * v.data()[j];
        }
        if (!all_finite(state)) {
            throw NumericalError("euler_integrate: non-finite state at step " + std::to_string(i) +
                                 " of " + std::to_string(steps));
        }
    }
    return denormalize(state, norm);
}

Image euler_integrate(const model::ModelParams& params, const Image& x_m0, int steps,
                      std::uint64_t base_seed) {
    return euler_integrate(ModelField(params), x_m0, steps, base_seed);
}

std::uint64_t member_seed(std::uint64_t seed, int k) {
    return derive_seed(seed, {0x3c6ef372ULL, static_cast<std::uint64_t>(k)});
}

void finalize_statistics(PosteriorEnsemble& e) {
    if (e.samples.empty()) {
        throw std::invalid_argument("posterior ensemble: no samples");
    }
    e.K = static_cast<int>(e.samples.size());
    const Image& first = e.samples.front();
    for (const Image& s : e.samples) {
        require_same_shape(first, s, "posterior ensemble");
    }
    const std::size_t n = first.size();
    std::vector<double> mu(n, 0.0);
    for (const Image& s : e.samples) {
        for (std::size_t j = 0; j < n; ++j) {
            mu[j] += s.data()[j];
        }
    }
    e.mean = Image(first.height(), first.width());
    for (std::size_t j = 0; j < n; ++j) {
        mu[j] /= e.K;
        e.mean.data()[j] = static_cast<float>(mu[j]);
    }
    if (e.K < 2) {
        e.pixel_std.reset();
        return;
    }
    std::vector<double> sq(n, 0.0);
    for (const Image& s : e.samples) {
        for (std::size_t j = 0; j < n; ++j) {
            const double d = s.data()[j] - mu[j];
            sq[j] += d * d;
        }
    }
    Image sd(first.height(), first.width());
    for (std::size_t j = 0; j < n; ++j) {
        sd.data()[j] = static_cast<float>(std::sqrt(sq[j] / (e.K - 1)));
    }
    e.pixel_std = std::move(sd);
}

PosteriorEnsemble posterior_sample(const VelocityField& field, const Image& x_m0, int steps, int K,
                                   std::uint64_t seed, int threads) {
    if (K < 1) {
        throw std::invalid_argument("posterior_sample: K must be >= 1");
    }
    PosteriorEnsemble e;
    e.samples.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        e.base_seeds.push_back(member_seed(seed, k));
    }
    parallel_for(static_cast<std::size_t>(K), threads, [&](std::size_t k) {
        e.samples[k] = euler_integrate(field, x_m0, steps, e.base_seeds[k]);
    });
    finalize_statistics(e);
    return e;
}

PosteriorEnsemble posterior_sample(const model::ModelParams& params, const Image& x_m0, int steps,
                                   int K, std::uint64_t seed, int threads) {
    return posterior_sample(ModelField(params), x_m0, steps, K, seed, threads);
}

Image mmse(const PosteriorEnsemble& ensemble) {
    if (ensemble.samples.empty()) {
        throw std::invalid_argument("mmse: empty ensemble");
    }
    return ensemble.mean;
}

} // namespace resmatch::sampler
