#pragma once

#include "resmatch/image.hpp"
#include "resmatch/velocity_model.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace resmatch::sampler {

/// Anything that can act as v(t, x, cond) in normalised intensity space.
class VelocityField {
public:
    virtual ~VelocityField() = default;
    virtual Image velocity(double t, const Image& x, const Image& cond) const = 0;
    /// Maps raw intensities to the space the field operates in.
    virtual NormConstants normalization() const { return {}; }
};

class ModelField final : public VelocityField {
public:
    explicit ModelField(const model::ModelParams& params) : params_(params) {}
    Image velocity(double t, const Image& x, const Image& cond) const override;
    NormConstants normalization() const override { return params_.norm; }

private:
    const model::ModelParams& params_;
};

class FunctionField final : public VelocityField {
public:
    using Fn = std::function<Image(double, const Image&, const Image&)>;
    explicit FunctionField(Fn fn, NormConstants norm = {}) : fn_(std::move(fn)), norm_(norm) {}
    Image velocity(double t, const Image& x, const Image& cond) const override {
        return fn_(t, x, cond);
    }
    NormConstants normalization() const override { return norm_; }

private:
    Fn fn_;
    NormConstants norm_;
};

/// Explicit Euler from x_0 ~ N(0, I) (seeded by base_seed) over T steps of
/// size 1/T, evaluating the field at the left endpoint of each step. The
/// condition is normalised with the field's constants and the final state
/// is de-normalised.
Image euler_integrate(const VelocityField& field, const Image& x_m0, int steps,
                      std::uint64_t base_seed);

Image euler_integrate(const model::ModelParams& params, const Image& x_m0, int steps,
                      std::uint64_t base_seed);

struct PosteriorEnsemble {
    std::vector<Image> samples;
    Image mean;
    std::optional<Image> pixel_std; ///< sample std (divisor K - 1), K >= 2 only
    int K = 0;
    std::vector<std::uint64_t> base_seeds;
};

/// Seed of ensemble member k.
std::uint64_t member_seed(std::uint64_t seed, int k);

/// Fills mean and pixel_std from the samples.
void finalize_statistics(PosteriorEnsemble& ensemble);

PosteriorEnsemble posterior_sample(const VelocityField& field, const Image& x_m0, int steps, int K,
                                   std::uint64_t seed, int threads = 1);

PosteriorEnsemble posterior_sample(const model::ModelParams& params, const Image& x_m0, int steps,
                                   int K, std::uint64_t seed, int threads = 1);

Image mmse(const PosteriorEnsemble& ensemble);

} // namespace resmatch::sampler
