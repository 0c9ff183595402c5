#include "doctest.h"

#include "resmatch/velocity_model.hpp"
#include "unit/gradcheck.hpp"
#include "unit/test_support.hpp"

#include <algorithm>
#include <cmath>

using namespace resmatch;
using namespace resmatch::model;

namespace {

ArchConfig tiny_arch() {
    ArchConfig a;
    a.base_channels = 8;
    a.n_res_blocks = 1;
    a.kernel_size = 3;
    a.time_embed_dim = 8;
    return a;
}

std::vector<flow::FlowBatch> random_batch(int n, int h, int w, std::uint64_t seed) {
    std::vector<flow::FlowBatch> out;
    for (int i = 0; i < n; ++i) {
        const auto s = seed * 100 + static_cast<std::uint64_t>(i);
        out.push_back(flow::make_batch(flow::gaussian_image(h, w, s), testing::random_image(h, w, s + 1),
                                       testing::random_image(h, w, s + 2), 0.05 * (i + 1)));
    }
    return out;
}

bool is_zero(const Image& img) {
    return max_value(img) == 0.0 && min_value(img) == 0.0;
}

} // namespace

TEST_CASE("init_params is deterministic and the fresh field is identically zero") {
    const ArchConfig arch;
    const ModelParams a = init_params(arch, 3);
    const ModelParams b = init_params(arch, 3);
    CHECK(a.params.bitwise_equal(b.params));
    CHECK_FALSE(a.params.bitwise_equal(init_params(arch, 4).params));
    const Image v = forward(a, 0.35, testing::random_image(16, 16, 1), testing::random_image(16, 16, 2));
    CHECK(v.height() == 16);
    CHECK(v.width() == 16);
    CHECK(is_zero(v));
}

TEST_CASE("parameter count for the default architecture") {
    // stem 2*32*9 + 32 = 608
    // block 2 * (32*32*9 + 32) + (32*64 + 32) = 20576, four blocks = 82304
    // head 32*9 + 1 = 289
    constexpr std::size_t kHandCount = 608 + 82304 + 289;
    const ArchConfig arch;
    CHECK(parameter_count(arch) == kHandCount);
    CHECK(init_params(arch, 0).params.total_size() == kHandCount);
    CHECK(init_params(tiny_arch(), 0).params.total_size() == parameter_count(tiny_arch()));
}

TEST_CASE("ArchConfig validation") {
    ArchConfig a;
    a.kernel_size = 4;
    CHECK_THROWS_AS(init_params(a, 0), std::invalid_argument);
    a = ArchConfig{};
    a.base_channels = 0;
    CHECK_THROWS_AS(init_params(a, 0), std::invalid_argument);
}

TEST_CASE("time_embed") {
    const auto zero = time_embed(0.0, 16);
    for (std::size_t i = 0; i < zero.size(); ++i) {
        CHECK(zero[i] == (i % 2 == 0 ? 0.0f : 1.0f));
    }
    for (int k = 0; k <= 20; ++k) {
        for (float v : time_embed(0.05 * k, 64)) {
            CHECK(v >= -1.0f);
            CHECK(v <= 1.0f);
        }
    }
    const auto a = time_embed(0.5, 64);
    const auto b = time_embed(0.5000001, 64);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::abs(a[i] - b[i]) <= 1e-3);
    }
    // adjacent grid times must not collapse onto the same code
    const auto c = time_embed(0.05, 64);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += std::abs(time_embed(0.0, 64)[i] - c[i]);
    }
    CHECK(diff > 1.0);
    CHECK_THROWS_AS(time_embed(0.5, 7), std::invalid_argument);
}

TEST_CASE("forward is deterministic and shape preserving") {
    ModelParams p = init_params(tiny_arch(), 9);
    testing::randomize(p, 10);
    const Image xt = testing::random_image(16, 16, 1);
    const Image cond = testing::random_image(16, 16, 2);
    const Image a = forward(p, 0.4, xt, cond);
    CHECK(bitwise_equal(a, forward(p, 0.4, xt, cond)));
    CHECK_FALSE(is_zero(a));
    for (auto [h, w] : {std::pair{3, 3}, std::pair{5, 11}, std::pair{17, 4}}) {
        const Image out = forward(p, 0.1, testing::random_image(h, w, 3), testing::random_image(h, w, 4));
        CHECK(out.height() == h);
        CHECK(out.width() == w);
    }
    CHECK_THROWS_AS(forward(p, 0.4, xt, Image(8, 16)), std::invalid_argument);
    CHECK_THROWS_AS(forward(p, 1.5, xt, cond), std::invalid_argument);
}

TEST_CASE("the time embedding changes the prediction") {
    ModelParams p = init_params(tiny_arch(), 9);
    testing::randomize(p, 11);
    const Image xt = testing::random_image(8, 8, 1);
    const Image cond = testing::random_image(8, 8, 2);
    CHECK_FALSE(bitwise_equal(forward(p, 0.0, xt, cond), forward(p, 0.5, xt, cond)));
}

TEST_CASE("forward agrees with the double-precision reference network") {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        ModelParams p = init_params(tiny_arch(), seed);
        testing::randomize(p, seed + 10);
        const Image xt = testing::random_image(7, 9, seed + 20);
        const Image cond = testing::random_image(7, 9, seed + 30);
        const Image out = forward(p, 0.35, xt, cond);
        const auto ref = testing::ref_forward(testing::RefParams(p), 0.35, xt, cond);
        for (std::size_t i = 0; i < ref.size(); ++i) {
            CHECK(out.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5).scale(1e-3));
        }
    }
}

TEST_CASE("loss_and_grad matches central finite differences") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ModelParams p = init_params(tiny_arch(), seed);
        testing::randomize(p, seed + 50);
        const auto batch = random_batch(2, 8, 8, seed);
        const auto result = testing::grad_check(p, batch, 1e-3, 1e-3);
        CAPTURE(seed);
        CHECK(result.checked == parameter_count(tiny_arch()));
        CHECK(result.max_rel_error <= 1e-2);
    }
}

TEST_CASE("loss_and_grad on the loss value and batch averaging") {
    ModelParams p = init_params(tiny_arch(), 2);
    testing::randomize(p, 3);
    const auto batch = random_batch(3, 8, 8, 7);
    const LossAndGrad single = loss_and_grad(p, batch);
    CHECK(single.loss == doctest::Approx(testing::reference_loss(p, batch)).epsilon(1e-6));

    std::vector<flow::FlowBatch> doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const LossAndGrad twice = loss_and_grad(p, doubled);
    CHECK(twice.loss == doctest::Approx(single.loss).epsilon(1e-12));
    for (std::size_t a = 0; a < single.grads.arrays().size(); ++a) {
        const auto& x = single.grads.arrays()[a].values;
        const auto& y = twice.grads.arrays()[a].values;
        float peak = 0.0f;
        for (float v : x) peak = std::max(peak, std::abs(v));
        for (std::size_t j = 0; j < x.size(); ++j) {
            CHECK(std::abs(y[j] - x[j]) <= 1e-5f * peak);
        }
    }
    CHECK_THROWS_AS(loss_and_grad(p, std::vector<flow::FlowBatch>{}), std::invalid_argument);
}

TEST_CASE("loss_and_grad does not depend on the thread count") {
    ModelParams p = init_params(tiny_arch(), 2);
    testing::randomize(p, 4);
    const auto batch = random_batch(5, 8, 8, 9);
    const LossAndGrad one = loss_and_grad(p, batch, 1);
    const LossAndGrad three = loss_and_grad(p, batch, 3);
    CHECK(one.loss == three.loss);
    CHECK(one.grads.bitwise_equal(three.grads));
}

TEST_CASE("a zero head blocks every upstream gradient exactly") {
    const ModelParams p = init_params(tiny_arch(), 5);
    const auto batch = random_batch(2, 8, 8, 3);
    const LossAndGrad lg = loss_and_grad(p, batch);
    for (const auto& a : lg.grads.arrays()) {
        if (a.name.starts_with("out.")) {
            continue;
        }
        for (float g : a.values) {
            CHECK(g == 0.0f);
        }
    }
    double head = 0.0;
    for (float g : lg.grads.at("out.weight").values) {
        head += std::abs(g);
    }
    CHECK(head > 0.0);
}

TEST_CASE("SGD applies theta - lr * grad exactly") {
    ParamSet p;
    p.add("theta", {1}, 1.0f);
    ParamSet g = p.zeros_like();
    g.at("theta").values[0] = 2.0f;
    const auto [next, state] = adam_step(p, g, make_optimizer(OptimizerKind::sgd, p), 0.1);
    CHECK(next.at("theta").values[0] == 0.8f);
    CHECK(state.step == 1);

    const auto [same, unused] = adam_step(p, p.zeros_like(), make_optimizer(OptimizerKind::sgd, p), 0.1);
    CHECK(same.bitwise_equal(p));
}

TEST_CASE("first Adam step moves each coordinate by lr * sign(g)") {
    ParamSet p;
    p.add("w", {5}, 0.5f);
    ParamSet g = p.zeros_like();
    const float grads[] = {3.0f, -0.01f, 1e-3f, -250.0f, 0.7f};
    std::copy(std::begin(grads), std::end(grads), g.at("w").values.begin());
    const double lr = 1e-2;
    const auto [next, state] = adam_step(p, g, make_optimizer(OptimizerKind::adam, p), lr);
    for (int i = 0; i < 5; ++i) {
        const double moved = static_cast<double>(next.at("w").values[i]) - 0.5;
        const double expected = -lr * (grads[i] > 0 ? 1.0 : -1.0);
        CHECK(std::abs(moved - expected) <= 1e-6);
    }
}

TEST_CASE("optimizer rejects gradients keyed differently") {
    ParamSet p;
    p.add("a", {2});
    ParamSet g;
    g.add("b", {2});
    CHECK_THROWS_AS(adam_step(p, g, make_optimizer(OptimizerKind::adam, p), 0.1), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(p, g, make_optimizer(OptimizerKind::sgd, p), 0.1), std::invalid_argument);
}

TEST_CASE("parameter names are unique") {
    ParamSet p;
    p.add("w", {1});
    CHECK_THROWS_AS(p.add("w", {2}), std::invalid_argument);
}
