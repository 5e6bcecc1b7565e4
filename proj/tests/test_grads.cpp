#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "visbridge/ops.hpp"

using namespace vb;
using diff::Tensor;

namespace {

// Forward pass for one primitive under test, usable both on and off
// tape so the same closure serves AD and finite differences.
Tensor run_op(diff::OpKind kind, std::vector<Tensor>& in, const diff::OpAttrs& attrs) {
    return diff::forward_op(kind, in, attrs);
}

}  // namespace

TEST_CASE("reverse-mode gradients match central differences for every primitive") {
    DtypeScope scope(Dtype::f64);
    Rng rng(91);
    for (auto kind : diff::all_op_kinds()) {
        CAPTURE(diff::op_name(kind));
        diff::OpAttrs attrs;
        std::vector<Tensor> in;
        switch (kind) {
            case diff::OpKind::matmul:
                in = {Tensor::randn({3, 4}, rng), Tensor::randn({4, 5}, rng)};
                break;
            case diff::OpKind::add:
            case diff::OpKind::mul:
                in = {Tensor::randn({2, 3}, rng), Tensor::randn({2, 3}, rng)};
                break;
            case diff::OpKind::affine:
                in = {Tensor::randn({2, 3, 4}, rng), Tensor::randn({4, 3}, rng),
                      Tensor::randn({3}, rng)};
                break;
            case diff::OpKind::layer_norm:
                in = {Tensor::randn({3, 6}, rng), Tensor::randn({6}, rng),
                      Tensor::randn({6}, rng)};
                break;
            case diff::OpKind::gelu:
            case diff::OpKind::softmax_over_last_axis:
                in = {Tensor::randn({3, 5}, rng)};
                break;
            case diff::OpKind::mean:
            case diff::OpKind::sum_of_squares:
                in = {Tensor::randn({4, 3}, rng)};
                break;
            case diff::OpKind::concat_last_axis:
                in = {Tensor::randn({2, 3}, rng), Tensor::randn({2, 4}, rng)};
                break;
            case diff::OpKind::slice:
                in = {Tensor::randn({3, 8}, rng)};
                attrs.axis = 1;
                attrs.start = 2;
                attrs.len = 4;
                break;
            case diff::OpKind::reshape:
                in = {Tensor::randn({3, 8}, rng)};
                attrs.shape = {6, 4};
                break;
            case diff::OpKind::broadcast_add:
                in = {Tensor::randn({2, 3, 4}, rng), Tensor::randn({4}, rng)};
                break;
        }
        for (auto& t : in) t.set_requires_grad(true);

        diff::GradMap grads;
        {
            diff::TapeScope ts;
            Tensor loss = diff::sum_of_squares(run_op(kind, in, attrs));
            grads = ts.tape.backward(loss);
        }
        auto loss_fn = [&]() { return diff::sum_of_squares(run_op(kind, in, attrs)).value(); };
        for (size_t arg = 0; arg < in.size(); ++arg) {
            CAPTURE(arg);
            const std::vector<double> fd = vbtest::fd_grad(in[arg], loss_fn);
            const Tensor ad = grads.grad_of(in[arg]);
            CHECK(vbtest::max_rel_err(ad.data(), fd) < 1e-5);
        }
    }
}

TEST_CASE("sum_of_squares gradient is 2x") {
    DtypeScope scope(Dtype::f64);
    Tensor x = Tensor::from({2}, {1, 2});
    x.set_requires_grad(true);
    diff::TapeScope ts;
    Tensor loss = diff::sum_of_squares(x);
    auto g = ts.tape.backward(loss).grad_of(x);
    CHECK(g.data()[0] == doctest::Approx(2.0));
    CHECK(g.data()[1] == doctest::Approx(4.0));
}

TEST_CASE("values outside the graph get exact zero gradients") {
    DtypeScope scope(Dtype::f64);
    Rng rng(4);
    Tensor x = Tensor::randn({3}, rng);
    Tensor unused = Tensor::randn({3}, rng);
    x.set_requires_grad(true);
    unused.set_requires_grad(true);
    diff::TapeScope ts;
    Tensor loss = diff::sum_of_squares(x);
    auto grads = ts.tape.backward(loss);
    CHECK_FALSE(grads.has(unused));
    Tensor g = grads.grad_of(unused);
    for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("loss constant in x gives zero gradient for x") {
    DtypeScope scope(Dtype::f64);
    Tensor x = Tensor::from({2}, {5, 6});
    Tensor y = Tensor::from({2}, {1, 2});
    x.set_requires_grad(true);
    y.set_requires_grad(true);
    diff::TapeScope ts;
    Tensor loss = diff::mean(y);
    auto grads = ts.tape.backward(loss);
    CHECK_FALSE(grads.has(x));
    Tensor g = grads.grad_of(x);
    for (double v : g.data()) CHECK(v == 0.0);
}

TEST_CASE("backward requires a scalar loss") {
    DtypeScope scope(Dtype::f64);
    Tensor x = Tensor::from({2}, {1, 2});
    x.set_requires_grad(true);
    diff::TapeScope ts;
    Tensor y = diff::add(x, x);
    CHECK_THROWS_AS(ts.tape.backward(y), ContractError);
}

TEST_CASE("randomized 3-layer network of 64 parameters passes the fd check") {
    DtypeScope scope(Dtype::f64);
    Rng rng(2024);
    Tensor x = Tensor::randn({5, 4}, rng);
    Tensor w1 = Tensor::randn({4, 5}, rng, 0.5), b1 = Tensor::randn({5}, rng, 0.1);
    Tensor w2 = Tensor::randn({5, 4}, rng, 0.5), b2 = Tensor::randn({4}, rng, 0.1);
    Tensor w3 = Tensor::randn({4, 3}, rng, 0.5), b3 = Tensor::randn({3}, rng, 0.1);
    std::vector<Tensor*> params = {&w1, &b1, &w2, &b2, &w3, &b3};
    int64_t count = 0;
    for (auto* p : params) {
        p->set_requires_grad(true);
        count += p->size();
    }
    REQUIRE(count == 64);

    auto forward = [&]() {
        Tensor h1 = diff::gelu(diff::affine(x, w1, b1));
        Tensor h2 = diff::gelu(diff::affine(h1, w2, b2));
        return diff::mean(diff::sum_of_squares(diff::affine(h2, w3, b3)));
    };
    diff::GradMap grads;
    {
        diff::TapeScope ts;
        grads = ts.tape.backward(forward());
    }
    auto loss_fn = [&]() { return forward().value(); };
    for (auto* p : params) {
        const std::vector<double> fd = vbtest::fd_grad(*p, loss_fn);
        CHECK(vbtest::max_rel_err(grads.grad_of(*p).data(), fd) < 1e-5);
    }
}

TEST_CASE("backward replays the tape once; repeated sweeps agree") {
    DtypeScope scope(Dtype::f64);
    Rng rng(8);
    Tensor x = Tensor::randn({4, 4}, rng);
    x.set_requires_grad(true);
    diff::TapeScope ts;
    Tensor y = diff::gelu(diff::matmul(x, x));
    Tensor loss = diff::mean(y);
    auto g1 = ts.tape.backward(loss).grad_of(x);
    auto g2 = ts.tape.backward(loss).grad_of(x);
    for (size_t i = 0; i < g1.data().size(); ++i) CHECK(g1.data()[i] == g2.data()[i]);
}

TEST_CASE("identical seeds and op sequences produce bitwise-identical results") {
    auto run = [](uint64_t seed) {
        DtypeScope scope(Dtype::f32);
        Rng rng(seed);
        Tensor x = Tensor::randn({8, 16}, rng);
        Tensor w = Tensor::randn({16, 16}, rng);
        Tensor y = diff::softmax_over_last_axis(diff::gelu(diff::matmul(x, w)));
        return y;
    };
    Tensor a = run(31), b = run(31);
    for (size_t i = 0; i < a.data().size(); ++i) CHECK(a.data()[i] == b.data()[i]);
}
