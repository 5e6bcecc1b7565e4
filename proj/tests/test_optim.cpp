#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "visbridge/ops.hpp"
#include "visbridge/optim.hpp"

using namespace vb;
using diff::Tensor;

namespace {

opt::ParamMap single(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    opt::ParamMap m;
    m.emplace(name, std::move(t));
    return m;
}

}  // namespace

TEST_CASE("zero gradient and zero weight decay leave parameters untouched") {
    opt::ParamMap params = single("p", Tensor::from({3}, {1.0, -2.0, 0.5}));
    const std::vector<double> before = params.at("p").data();
    diff::GradMap grads;  // empty: gradient reads back as zero
    opt::AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    opt::AdamWState state;
    opt::adamw_step(params, grads, cfg, state);
    CHECK(params.at("p").data() == before);
    CHECK(state.step == 1);
}

TEST_CASE("positive gradient moves a scalar parameter down") {
    opt::ParamMap params = single("p", Tensor::from({1}, {1.0}));
    diff::GradMap grads;
    {
        diff::TapeScope ts;
        Tensor loss = diff::mean(params.at("p"));
        grads = ts.tape.backward(loss);
    }
    opt::AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    opt::AdamWState state;
    opt::adamw_step(params, grads, cfg, state);
    CHECK(params.at("p").data()[0] < 1.0);
}

TEST_CASE("a hundred steps on a quadratic converge near the minimum") {
    DtypeScope scope(Dtype::f64);
    opt::ParamMap params = single("p", Tensor::from({1}, {0.0}));
    opt::AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    opt::AdamWState state;
    for (int i = 0; i < 100; ++i) {
        diff::GradMap grads;
        {
            diff::TapeScope ts;
            Tensor r = diff::add_scalar(params.at("p"), -3.0);
            grads = ts.tape.backward(diff::sum_of_squares(r));
        }
        opt::adamw_step(params, grads, cfg, state);
    }
    CHECK(std::fabs(params.at("p").data()[0] - 3.0) < 0.1);
}

TEST_CASE("weight decay is decoupled from the gradient path") {
    // With zero gradient, one step shrinks the parameter by exactly
    // lr * wd * p (no moment contribution).
    DtypeScope scope(Dtype::f64);
    opt::ParamMap params = single("p", Tensor::from({1}, {2.0}));
    diff::GradMap grads;
    opt::AdamWConfig cfg;
    cfg.lr = 0.5;
    cfg.weight_decay = 0.01;
    opt::AdamWState state;
    opt::adamw_step(params, grads, cfg, state);
    CHECK(params.at("p").data()[0] == doctest::Approx(2.0 - 0.5 * 0.01 * 2.0).epsilon(1e-12));
}

TEST_CASE("update visits parameters in name order deterministically") {
    auto run = [&]() {
        opt::ParamMap params;
        for (const char* n : {"b", "a", "c"}) {
            Tensor t = Tensor::from({2}, {1.0, 2.0});
            t.set_requires_grad(true);
            params.emplace(n, std::move(t));
        }
        diff::GradMap grads;
        {
            diff::TapeScope ts;
            Tensor s = diff::add(params.at("a"), diff::add(params.at("b"), params.at("c")));
            grads = ts.tape.backward(diff::sum_of_squares(s));
        }
        opt::AdamWConfig cfg;
        opt::AdamWState state;
        opt::adamw_step(params, grads, cfg, state);
        return params;
    };
    opt::ParamMap r1 = run(), r2 = run();
    for (auto& [name, t] : r1) {
        const auto& u = r2.at(name);
        for (size_t i = 0; i < t.data().size(); ++i) CHECK(t.data()[i] == u.data()[i]);
    }
}

TEST_CASE("grad shape mismatch is a contract error") {
    opt::ParamMap params = single("p", Tensor::from({3}, {1, 2, 3}));
    std::unordered_map<int64_t, std::vector<double>> raw;
    raw[params.at("p").id()] = {1.0, 2.0};  // wrong length
    diff::GradMap grads(std::move(raw));
    opt::AdamWConfig cfg;
    opt::AdamWState state;
    CHECK_THROWS_AS(opt::adamw_step(params, grads, cfg, state), ContractError);
}

TEST_CASE("non-positive lr is rejected by the optimizer itself") {
    opt::ParamMap params = single("p", Tensor::from({1}, {1.0}));
    diff::GradMap grads;
    opt::AdamWConfig cfg;
    cfg.lr = 0.0;
    opt::AdamWState state;
    CHECK_THROWS_AS(opt::adamw_step(params, grads, cfg, state), ContractError);
}

TEST_CASE("moments and params are requantized to f32 in float mode") {
    DtypeScope scope(Dtype::f32);
    opt::ParamMap params = single("p", Tensor::from({1}, {1.0}));
    diff::GradMap grads;
    {
        diff::TapeScope ts;
        grads = ts.tape.backward(diff::sum_of_squares(params.at("p")));
    }
    opt::AdamWConfig cfg;
    opt::AdamWState state;
    opt::adamw_step(params, grads, cfg, state);
    const double p = params.at("p").data()[0];
    CHECK(p == static_cast<double>(static_cast<float>(p)));
    const double m = state.m.at("p")[0];
    CHECK(m == static_cast<double>(static_cast<float>(m)));
    const double v = state.v.at("p")[0];
    CHECK(v == static_cast<double>(static_cast<float>(v)));
}
