#pragma once

#include "resmatch/flow_core.hpp"
#include "resmatch/image.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace resmatch::model {

/// Residual CNN v(t, x_t, x_m0). x_t and x_m0 enter as two stacked input
/// channels; every residual block adds a linear projection of the sinusoidal
/// time embedding to its output.
struct ArchConfig {
    int base_channels = 32;
    int n_res_blocks = 4;
    int kernel_size = 3;
    int time_embed_dim = 64;

    void validate() const;
    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

struct ParamArray {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

/// Ordered, uniquely named parameter arrays. Gradients and optimizer moments
/// share the layout of the parameters they belong to.
class ParamSet {
public:
    void add(std::string name, std::vector<int> shape, float fill = 0.0f);

    ParamArray& at(const std::string& name);
    const ParamArray& at(const std::string& name) const;
    const ParamArray* find(const std::string& name) const;

    std::vector<ParamArray>& arrays() noexcept { return arrays_; }
    const std::vector<ParamArray>& arrays() const noexcept { return arrays_; }
    std::size_t total_size() const noexcept;

    ParamSet zeros_like() const;
    bool same_layout(const ParamSet& other) const noexcept;
    bool bitwise_equal(const ParamSet& other) const noexcept;

private:
    std::vector<ParamArray> arrays_;
};

struct ModelParams {
    ArchConfig arch;
    NormConstants norm;
    ParamSet params;
};

/// Entry 2k = sin(1000 t w_k), entry 2k+1 = cos(1000 t w_k), w_k = 10000^(-2k/dim).
std::vector<float> time_embed(double t, int dim);

inline constexpr double kTimeScale = 1000.0;

/// Fan-in scaled uniform weights, zero biases, zero output layer.
ModelParams init_params(const ArchConfig& arch, std::uint64_t seed);

/// Closed-form number of scalar parameters for `arch`.
std::size_t parameter_count(const ArchConfig& arch);

/// Predicted velocity in normalised intensity space.
Image forward(const ModelParams& params, double t, const Image& x_t, const Image& x_m0);

struct LossAndGrad {
    double loss = 0.0;
    ParamSet grads;
};

/// Batch-mean flow-matching loss and its exact gradient. Per-sample
/// gradients are reduced in batch order, so results do not depend on
/// `threads`.
LossAndGrad loss_and_grad(const ModelParams& params, std::span<const flow::FlowBatch> batch,
                          int threads = 1);

enum class OptimizerKind { adam, sgd };

struct OptimizerState {
    OptimizerKind kind = OptimizerKind::adam;
    std::int64_t step = 0;
    ParamSet m;
    ParamSet v;

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;
};

OptimizerState make_optimizer(OptimizerKind kind, const ParamSet& like);

void apply_update(ParamSet& params, const ParamSet& grads, OptimizerState& state, double lr);

std::pair<ParamSet, OptimizerState> adam_step(const ParamSet& params, const ParamSet& grads,
                                              const OptimizerState& state, double lr);

} // namespace resmatch::model
