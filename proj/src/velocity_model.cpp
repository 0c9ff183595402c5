#include "resmatch/velocity_model.hpp"

#include "resmatch/parallel.hpp"
#include "resmatch/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace resmatch::model {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

std::string block_name(int b, const char* leaf) {
    return "block" + std::to_string(b) + "." + leaf;
}

/// Column matrix of shape (cin * k * k) x (h * w) for a same-padded conv.
void im2col(const float* in, int cin, int h, int w, int k, float* col) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < cin; ++ci) {
        const float* plane = in + ci * hw;
        for (int ky = 0; ky < k; ++ky) {
            const int dy = ky - pad;
            for (int kx = 0; kx < k; ++kx) {
                const int dx = kx - pad;
                float* dst = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                const int c_lo = std::max(0, -dx);
                const int c_hi = std::min(w, w - dx);
                for (int r = 0; r < h; ++r) {
                    float* row = dst + static_cast<std::size_t>(r) * w;
                    const int rr = r + dy;
                    if (rr < 0 || rr >= h || c_lo >= c_hi) {
                        std::fill(row, row + w, 0.0f);
                        continue;
                    }
                    std::fill(row, row + c_lo, 0.0f);
                    std::memcpy(row + c_lo, plane + static_cast<std::size_t>(rr) * w + c_lo + dx,
                                sizeof(float) * static_cast<std::size_t>(c_hi - c_lo));
                    std::fill(row + c_hi, row + w, 0.0f);
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters column gradients back onto the input planes.
void col2im_add(const float* col, int cin, int h, int w, int k, float* out) {
    const int pad = k / 2;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < cin; ++ci) {
        float* plane = out + ci * hw;
        for (int ky = 0; ky < k; ++ky) {
            const int dy = ky - pad;
            for (int kx = 0; kx < k; ++kx) {
                const int dx = kx - pad;
                const float* src = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
                const int c_lo = std::max(0, -dx);
                const int c_hi = std::min(w, w - dx);
                for (int r = 0; r < h; ++r) {
                    const int rr = r + dy;
                    if (rr < 0 || rr >= h) {
                        continue;
                    }
                    const float* s = src + static_cast<std::size_t>(r) * w;
                    float* d = plane + static_cast<std::size_t>(rr) * w + dx;
                    for (int c = c_lo; c < c_hi; ++c) {
                        d[c] += s[c];
                    }
                }
            }
        }
    }
}

/// Fixed-order sum; Eigen's reductions peel by pointer alignment, which would
/// make results depend on where the buffer happens to live.
float plain_sum(const float* v, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += v[i];
    }
    return static_cast<float>(acc);
}

float silu(float x) { return x / (1.0f + std::exp(-x)); }

float silu_grad(float x) {
    const float s = 1.0f / (1.0f + std::exp(-x));
    return s * (1.0f + x * (1.0f - s));
}

struct ConvRef {
    const ParamArray* weight;
    const ParamArray* bias;
    int cin;
    int cout;
};

/// Resolved views of every layer so the hot loops avoid name lookups.
struct Layers {
    ConvRef in;
    std::vector<ConvRef> conv1;
    std::vector<ConvRef> conv2;
    std::vector<const ParamArray*> time_w;
    std::vector<const ParamArray*> time_b;
    ConvRef out;
};

Layers resolve(const ModelParams& p) {
    const ArchConfig& a = p.arch;
    const int c = a.base_channels;
    Layers l;
    l.in = {&p.params.at("in.weight"), &p.params.at("in.bias"), 2, c};
    for (int b = 0; b < a.n_res_blocks; ++b) {
        l.conv1.push_back({&p.params.at(block_name(b, "conv1.weight")),
                           &p.params.at(block_name(b, "conv1.bias")), c, c});
        l.conv2.push_back({&p.params.at(block_name(b, "conv2.weight")),
                           &p.params.at(block_name(b, "conv2.bias")), c, c});
        l.time_w.push_back(&p.params.at(block_name(b, "time.weight")));
        l.time_b.push_back(&p.params.at(block_name(b, "time.bias")));
    }
    l.out = {&p.params.at("out.weight"), &p.params.at("out.bias"), c, 1};
    return l;
}

/// out = W * col + b, out is cout x hw.
void conv_apply(const ConvRef& conv, int k, const float* col, std::size_t hw, float* out) {
    const auto kk = static_cast<Eigen::Index>(conv.cin) * k * k;
    ConstMatMap weight(conv.weight->values.data(), conv.cout, kk);
    ConstMatMap cols(col, kk, static_cast<Eigen::Index>(hw));
    MatMap result(out, conv.cout, static_cast<Eigen::Index>(hw));
    result.noalias() = weight * cols;
    for (int co = 0; co < conv.cout; ++co) {
        result.row(co).array() += conv.bias->values[co];
    }
}

/// Accumulates dW, db for a conv layer and (optionally) writes dcol.
void conv_backward(const ConvRef& conv, int k, const float* col, const float* dout,
                   std::size_t hw, ParamArray& dweight, ParamArray& dbias, float* dcol) {
    const auto kk = static_cast<Eigen::Index>(conv.cin) * k * k;
    const auto n = static_cast<Eigen::Index>(hw);
    ConstMatMap cols(col, kk, n);
    ConstMatMap grad_out(dout, conv.cout, n);
    MatMap dw(dweight.values.data(), conv.cout, kk);
    dw.noalias() += grad_out * cols.transpose();
    for (int co = 0; co < conv.cout; ++co) {
        dbias.values[co] += plain_sum(dout + static_cast<std::size_t>(co) * hw, hw);
    }
    if (dcol != nullptr) {
        ConstMatMap weight(conv.weight->values.data(), conv.cout, kk);
        MatMap dc(dcol, kk, n);
        dc.noalias() = weight.transpose() * grad_out;
    }
}

struct BlockCache {
    std::vector<float> h_in;
    std::vector<float> col1;
    std::vector<float> z1;
    std::vector<float> col2;
};

struct ForwardCache {
    std::vector<float> col_in;
    std::vector<BlockCache> blocks;
    std::vector<float> h_final;
    std::vector<float> col_out;
    std::vector<float> embedding;
};

/// Runs the network on one input pair. When `cache` is non-null every
/// activation needed for backpropagation is retained.
Image run_forward(const ModelParams& p, const Layers& l, double t, const Image& x_t,
                  const Image& x_m0, ForwardCache* cache) {
    require_same_shape(x_t, x_m0, "forward");
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("forward: t must lie in [0, 1]");
    }
    const ArchConfig& a = p.arch;
    const int h = x_t.height();
    const int w = x_t.width();
    const int k = a.kernel_size;
    const int c = a.base_channels;
    if (h < 1 || w < 1) {
        throw std::invalid_argument("forward: empty input");
    }
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t kk = static_cast<std::size_t>(k) * k;

    std::vector<float> input(2 * hw);
    std::copy(x_t.pixels().begin(), x_t.pixels().end(), input.begin());
    std::copy(x_m0.pixels().begin(), x_m0.pixels().end(), input.begin() + static_cast<std::ptrdiff_t>(hw));

    const std::vector<float> emb = time_embed(t, a.time_embed_dim);

    ForwardCache local;
    ForwardCache& fc = cache != nullptr ? *cache : local;
    fc.embedding = emb;
    fc.blocks.resize(static_cast<std::size_t>(a.n_res_blocks));

    fc.col_in.resize(2 * kk * hw);
    im2col(input.data(), 2, h, w, k, fc.col_in.data());
    std::vector<float> hidden(static_cast<std::size_t>(c) * hw);
    conv_apply(l.in, k, fc.col_in.data(), hw, hidden.data());

    std::vector<float> act(hidden.size());
    std::vector<float> z2(hidden.size());
    for (int b = 0; b < a.n_res_blocks; ++b) {
        BlockCache& bc = fc.blocks[static_cast<std::size_t>(b)];
        bc.h_in = hidden;
        std::transform(hidden.begin(), hidden.end(), act.begin(), silu);
        bc.col1.resize(static_cast<std::size_t>(c) * kk * hw);
        im2col(act.data(), c, h, w, k, bc.col1.data());
        bc.z1.resize(hidden.size());
        conv_apply(l.conv1[b], k, bc.col1.data(), hw, bc.z1.data());
        std::transform(bc.z1.begin(), bc.z1.end(), act.begin(), silu);
        bc.col2.resize(static_cast<std::size_t>(c) * kk * hw);
        im2col(act.data(), c, h, w, k, bc.col2.data());
        conv_apply(l.conv2[b], k, bc.col2.data(), hw, z2.data());

        const float* tw = l.time_w[b]->values.data();
        for (int ch = 0; ch < c; ++ch) {
            double shift = 0.0;
            for (int e = 0; e < a.time_embed_dim; ++e) {
                shift += static_cast<double>(tw[static_cast<std::size_t>(ch) * a.time_embed_dim + e]) * emb[e];
            }
            const float s = static_cast<float>(shift) + l.time_b[b]->values[ch];
            float* hp = hidden.data() + static_cast<std::size_t>(ch) * hw;
            const float* zp = z2.data() + static_cast<std::size_t>(ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                hp[i] = hp[i] + zp[i] + s;
            }
        }
        if (cache == nullptr) {
            bc = BlockCache{};
        }
    }

    fc.h_final = hidden;
    std::transform(hidden.begin(), hidden.end(), act.begin(), silu);
    fc.col_out.resize(static_cast<std::size_t>(c) * kk * hw);
    im2col(act.data(), c, h, w, k, fc.col_out.data());
    Image out(h, w);
    conv_apply(l.out, k, fc.col_out.data(), hw, out.data());
    return out;
}

/// Backpropagates d(loss)/d(output) through a cached forward pass.
void run_backward(const ModelParams& p, const Layers& l, const ForwardCache& fc, int h, int w,
                  const std::vector<float>& dout, ParamSet& g) {
    const ArchConfig& a = p.arch;
    const int k = a.kernel_size;
    const int c = a.base_channels;
    const std::size_t hw = static_cast<std::size_t>(h) * w;
    const std::size_t kk = static_cast<std::size_t>(k) * k;

    std::vector<float> dcol(static_cast<std::size_t>(c) * kk * hw);
    conv_backward(l.out, k, fc.col_out.data(), dout.data(), hw, g.at("out.weight"),
                  g.at("out.bias"), dcol.data());
    std::vector<float> dh(static_cast<std::size_t>(c) * hw, 0.0f);
    col2im_add(dcol.data(), c, h, w, k, dh.data());
    for (std::size_t i = 0; i < dh.size(); ++i) {
        dh[i] *= silu_grad(fc.h_final[i]);
    }

    std::vector<float> da(dh.size());
    for (int b = a.n_res_blocks - 1; b >= 0; --b) {
        const BlockCache& bc = fc.blocks[static_cast<std::size_t>(b)];

        ParamArray& dtw = g.at(block_name(b, "time.weight"));
        ParamArray& dtb = g.at(block_name(b, "time.bias"));
        for (int ch = 0; ch < c; ++ch) {
            const float* dp = dh.data() + static_cast<std::size_t>(ch) * hw;
            const float gs = plain_sum(dp, hw);
            dtb.values[ch] += gs;
            float* row = dtw.values.data() + static_cast<std::size_t>(ch) * a.time_embed_dim;
            for (int e = 0; e < a.time_embed_dim; ++e) {
                row[e] += gs * fc.embedding[e];
            }
        }

        conv_backward(l.conv2[b], k, bc.col2.data(), dh.data(), hw,
                      g.at(block_name(b, "conv2.weight")), g.at(block_name(b, "conv2.bias")),
                      dcol.data());
        std::fill(da.begin(), da.end(), 0.0f);
        col2im_add(dcol.data(), c, h, w, k, da.data());
        for (std::size_t i = 0; i < da.size(); ++i) {
            da[i] *= silu_grad(bc.z1[i]);
        }
        conv_backward(l.conv1[b], k, bc.col1.data(), da.data(), hw,
                      g.at(block_name(b, "conv1.weight")), g.at(block_name(b, "conv1.bias")),
                      dcol.data());
        std::fill(da.begin(), da.end(), 0.0f);
        col2im_add(dcol.data(), c, h, w, k, da.data());
        for (std::size_t i = 0; i < dh.size(); ++i) {
            dh[i] += da[i] * silu_grad(bc.h_in[i]);
        }
    }
    conv_backward(l.in, k, fc.col_in.data(), dh.data(), hw, g.at("in.weight"), g.at("in.bias"),
                  nullptr);
}

} // namespace

void ArchConfig::validate() const {
    if (base_channels < 1 || n_res_blocks < 1 || kernel_size < 1 || time_embed_dim < 1) {
        throw std::invalid_argument("ArchConfig: all dimensions must be >= 1");
    }
    if (kernel_size % 2 == 0) {
        throw std::invalid_argument("ArchConfig: kernel_size must be odd");
    }
    if (time_embed_dim % 2 != 0) {
        throw std::invalid_argument("ArchConfig: time_embed_dim must be even");
    }
}

void ParamSet::add(std::string name, std::vector<int> shape, float fill) {
    if (find(name) != nullptr) {
        throw std::invalid_argument("ParamSet: duplicate parameter name '" + name + "'");
    }
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 1) {
            throw std::invalid_argument("ParamSet: non-positive dimension in '" + name + "'");
        }
        n *= static_cast<std::size_t>(d);
    }
    arrays_.push_back({std::move(name), std::move(shape), std::vector<float>(n, fill)});
}

ParamArray& ParamSet::at(const std::string& name) {
    return const_cast<ParamArray&>(std::as_const(*this).at(name));
}

const ParamArray& ParamSet::at(const std::string& name) const {
    const ParamArray* p = find(name);
    if (p == nullptr) {
        throw std::invalid_argument("ParamSet: no parameter named '" + name + "'");
    }
    return *p;
}

const ParamArray* ParamSet::find(const std::string& name) const {
    for (const ParamArray& a : arrays_) {
        if (a.name == name) {
            return &a;
        }
    }
    return nullptr;
}

std::size_t ParamSet::total_size() const noexcept {
    std::size_t n = 0;
    for (const ParamArray& a : arrays_) {
        n += a.values.size();
    }
    return n;
}

ParamSet ParamSet::zeros_like() const {
    ParamSet out;
    out.arrays_.reserve(arrays_.size());
    for (const ParamArray& a : arrays_) {
        out.arrays_.push_back({a.name, a.shape, std::vector<float>(a.values.size(), 0.0f)});
    }
    return out;
}

bool ParamSet::same_layout(const ParamSet& other) const noexcept {
    if (arrays_.size() != other.arrays_.size()) {
        return false;
    }
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
        if (arrays_[i].name != other.arrays_[i].name || arrays_[i].shape != other.arrays_[i].shape) {
            return false;
        }
    }
    return true;
}

bool ParamSet::bitwise_equal(const ParamSet& other) const noexcept {
    if (!same_layout(other)) {
        return false;
    }
    for (std::size_t i = 0; i < arrays_.size(); ++i) {
        const auto& x = arrays_[i].values;
        const auto& y = other.arrays_[i].values;
        if (!x.empty() && std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) {
            return false;
        }
    }
    return true;
}

std::vector<float> time_embed(double t, int dim) {
    if (dim < 2 || dim % 2 != 0) {
        throw std::invalid_argument("time_embed: dim must be a positive even number");
    }
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::invalid_argument("time_embed: t must lie in [0, 1]");
    }
    std::vector<float> out(static_cast<std::size_t>(dim));
    const double scaled = kTimeScale * t;
    for (int k = 0; k < dim / 2; ++k) {
        const double freq = std::pow(10000.0, -2.0 * k / dim);
        out[2 * k] = static_cast<float>(std::sin(scaled * freq));
        out[2 * k + 1] = static_cast<float>(std::cos(scaled * freq));
    }
    return out;
}

std::size_t parameter_count(const ArchConfig& arch) {
    const std::size_t c = arch.base_channels;
    const std::size_t kk = static_cast<std::size_t>(arch.kernel_size) * arch.kernel_size;
    const std::size_t e = arch.time_embed_dim;
    const std::size_t stem = 2 * c * kk + c;
    const std::size_t block = 2 * (c * c * kk + c) + (c * e + c);
    const std::size_t head = c * kk + 1;
    return stem + arch.n_res_blocks * block + head;
}

ModelParams init_params(const ArchConfig& arch, std::uint64_t seed) {
    arch.validate();
    const int c = arch.base_channels;
    const int k = arch.kernel_size;
    ModelParams mp;
    mp.arch = arch;
    ParamSet& p = mp.params;
    p.add("in.weight", {c, 2, k, k});
    p.add("in.bias", {c});
    for (int b = 0; b < arch.n_res_blocks; ++b) {
        p.add(block_name(b, "conv1.weight"), {c, c, k, k});
        p.add(block_name(b, "conv1.bias"), {c});
        p.add(block_name(b, "conv2.weight"), {c, c, k, k});
        p.add(block_name(b, "conv2.bias"), {c});
        p.add(block_name(b, "time.weight"), {c, arch.time_embed_dim});
        p.add(block_name(b, "time.bias"), {c});
    }
    p.add("out.weight", {1, c, k, k});
    p.add("out.bias", {1});

    std::uint64_t index = 0;
    for (ParamArray& a : p.arrays()) {
        ++index;
        const bool is_weight = a.shape.size() > 1;
        if (!is_weight || a.name.starts_with("out.")) {
            continue;
        }
        std::size_t fan_in = 1;
        for (std::size_t d = 1; d < a.shape.size(); ++d) {
            fan_in *= static_cast<std::size_t>(a.shape[d]);
        }
        const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
        CounterRng rng(derive_seed(seed, {index}));
        for (float& v : a.values) {
            v = static_cast<float>(rng.uniform(-bound, bound));
        }
    }
    return mp;
}

Image forward(const ModelParams& params, double t, const Image& x_t, const Image& x_m0) {
    const Layers l = resolve(params);
    return run_forward(params, l, t, x_t, x_m0, nullptr);
}

LossAndGrad loss_and_grad(const ModelParams& params, std::span<const flow::FlowBatch> batch,
                          int threads) {
    if (batch.empty()) {
        throw std::invalid_argument("loss_and_grad: empty batch");
    }
    const Layers l = resolve(params);
    const double scale = 1.0 / static_cast<double>(batch.size());
    std::vector<ParamSet> per_sample(batch.size());
    std::vector<double> losses(batch.size(), 0.0);

    parallel_for(batch.size(), threads, [&](std::size_t i) {
        const flow::FlowBatch& fb = batch[i];
        require_same_shape(fb.x_t, fb.x_m0, "loss_and_grad");
        require_same_shape(fb.x0, fb.x_m1, "loss_and_grad");
        require_same_shape(fb.x_t, fb.x0, "loss_and_grad");
        ForwardCache cache;
        const Image pred = run_forward(params, l, fb.t, fb.x_t, fb.x_m0, &cache);
        const double n = static_cast<double>(pred.size());
        std::vector<float> dout(pred.size());
        double sum = 0.0;
        for (std::size_t j = 0; j < pred.size(); ++j) {
            const double target = static_cast<double>(fb.x_m1.data()[j]) - fb.x0.data()[j];
            const double d = pred.data()[j] - target;
            sum += d * d;
            dout[j] = static_cast<float>(2.0 * d * scale / n);
        }
        losses[i] = sum / n;
        per_sample[i] = params.params.zeros_like();
        run_backward(params, l, cache, pred.height(), pred.width(), dout, per_sample[i]);
    });

    LossAndGrad out;
    out.grads = params.params.zeros_like();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.loss += losses[i];
        auto& dst = out.grads.arrays();
        const auto& src = per_sample[i].arrays();
        for (std::size_t a = 0; a < dst.size(); ++a) {
            for (std::size_t j = 0; j < dst[a].values.size(); ++j) {
                dst[a].values[j] += src[a].values[j];
            }
        }
    }
    out.loss *= scale;
    return out;
}

OptimizerState make_optimizer(OptimizerKind kind, const ParamSet& like) {
    OptimizerState s;
    s.kind = kind;
    if (kind == OptimizerKind::adam) {
        s.m = like.zeros_like();
        s.v = like.zeros_like();
    }
    return s;
}

void apply_update(ParamSet& params, const ParamSet& grads, OptimizerState& state, double lr) {
    if (!params.same_layout(grads)) {
        throw std::invalid_argument("optimizer: gradients are not keyed like the parameters");
    }
    if (state.kind == OptimizerKind::adam &&
        (!params.same_layout(state.m) || !params.same_layout(state.v))) {
        throw std::invalid_argument("optimizer: state is not keyed like the parameters");
    }
    ++state.step;
    auto& ps = params.arrays();
    const auto& gs = grads.arrays();
    if (state.kind == OptimizerKind::sgd) {
        for (std::size_t a = 0; a < ps.size(); ++a) {
            for (std::size_t j = 0; j < ps[a].values.size(); ++j) {
                ps[a].values[j] = static_cast<float>(ps[a].values[j] - lr * gs[a].values[j]);
            }
        }
        return;
    }
    const double b1 = OptimizerState::beta1;
    const double b2 = OptimizerState::beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    auto& ms = state.m.arrays();
    auto& vs = state.v.arrays();
    for (std::size_t a = 0; a < ps.size(); ++a) {
        for (std::size_t j = 0; j < ps[a].values.size(); ++j) {
            const double g = gs[a].values[j];
            const double m = b1 * ms[a].values[j] + (1.0 - b1) * g;
            const double v = b2 * vs[a].values[j] + (1.0 - b2) * g * g;
            ms[a].values[j] = static_cast<float>(m);
            vs[a].values[j] = static_cast<float>(v);
            const double m_hat = m / c1;
            const double v_hat = v / c2;
            ps[a].values[j] = static_cast<float>(ps[a].values[j] -
                                                 lr * m_hat / (std::sqrt(v_hat) + OptimizerState::eps));
        }
    }
}

std::pair<ParamSet, OptimizerState> adam_step(const ParamSet& params, const ParamSet& grads,
                                              const OptimizerState& state, double lr) {
    std::pair<ParamSet, OptimizerState> out{params, state};
    apply_update(out.first, grads, out.second, lr);
    return out;
}

} // namespace resmatch::model
