#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "visbridge/ops.hpp"

using namespace vb;
using diff::Tensor;

TEST_CASE("add is componentwise") {
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = Tensor::from({2}, {3, 4});
    Tensor c = diff::add(a, b);
    CHECK(c.data()[0] == 4.0);
    CHECK(c.data()[1] == 6.0);
}

TEST_CASE("matmul by identity returns the operand") {
    Rng rng(7);
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor a = Tensor::randn({3, 3}, rng);
    Tensor out = diff::matmul(eye, a);
    for (int i = 0; i < 9; ++i) CHECK(out.data()[i] == doctest::Approx(a.data()[i]));
}

TEST_CASE("layer_norm of a constant vector is zero before the affine") {
    Tensor x = Tensor::full({1, 4}, 3.25);
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    Tensor out = diff::layer_norm(x, gamma, beta);
    for (double v : out.data()) CHECK(std::fabs(v) < 1e-12);
}

TEST_CASE("matmul transpose_b matches explicit transpose") {
    Rng rng(3);
    Tensor a = Tensor::randn({2, 5}, rng);
    Tensor b = Tensor::randn({4, 5}, rng);
    Tensor bt = Tensor::zeros({5, 4});
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) bt.data()[j * 4 + i] = b.data()[i * 5 + j];
    Tensor y1 = diff::matmul(a, b, true);
    Tensor y2 = diff::matmul(a, bt);
    for (int i = 0; i < 8; ++i) CHECK(y1.data()[i] == doctest::Approx(y2.data()[i]));
}

TEST_CASE("batched matmul broadcasts an unbatched right operand") {
    Rng rng(11);
    Tensor a = Tensor::randn({2, 3, 4}, rng);
    Tensor w = Tensor::randn({4, 5}, rng);
    Tensor y = diff::matmul(a, w);
    REQUIRE(y.shape() == std::vector<int>{2, 3, 5});
    // Second batch element equals the slice-wise product.
    Tensor a1 = diff::slice(a, 0, 1, 1);
    Tensor y1 = diff::matmul(diff::reshape(a1, {3, 4}), w);
    for (int i = 0; i < 15; ++i)
        CHECK(y.data()[15 + i] == doctest::Approx(y1.data()[i]));
}

TEST_CASE("softmax rows sum to one and are positive") {
    Rng rng(5);
    Tensor x = Tensor::randn({4, 7}, rng, 3.0);
    Tensor s = diff::softmax_over_last_axis(x);
    for (int r = 0; r < 4; ++r) {
        double sum = 0;
        for (int c = 0; c < 7; ++c) {
            const double v = s.data()[r * 7 + c];
            CHECK(v > 0.0);
            sum += v;
        }
        CHECK(std::fabs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("softmax is stable under large inputs") {
    Tensor x = Tensor::from({1, 3}, {1000.0, 1001.0, 999.0});
    Tensor s = diff::softmax_over_last_axis(x);
    double sum = 0;
    for (double v : s.data()) sum += v;
    CHECK(std::fabs(sum - 1.0) < 1e-6);
}

TEST_CASE("shape mismatch raises a dimension error") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 3});
    CHECK_THROWS_AS(diff::add(a, b), DimensionError);
    CHECK_THROWS_AS(diff::matmul(a, Tensor::zeros({2, 2})), DimensionError);
    CHECK_THROWS_AS(diff::concat_last_axis(a, b), DimensionError);
    CHECK_THROWS_AS(diff::reshape(a, {4, 2}), ContractError);
}

TEST_CASE("non-finite output raises a numeric error naming the op") {
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_WITH_AS(diff::mul(big, big), doctest::Contains("mul"), NumericError);
    Tensor huge = Tensor::full({2, 2}, 1e200);
    CHECK_THROWS_WITH_AS(diff::matmul(huge, huge), doctest::Contains("matmul"),
                         NumericError);
}

TEST_CASE("every primitive is deterministic for fixed inputs") {
    DtypeScope scope(Dtype::f32);
    Rng rng(42);
    Tensor x = Tensor::randn({2, 4, 6}, rng);
    Tensor w = Tensor::randn({6, 6}, rng);
    Tensor b = Tensor::randn({6}, rng);
    for (auto kind : diff::all_op_kinds()) {
        diff::OpAttrs attrs;
        std::vector<Tensor> in;
        switch (kind) {
            case diff::OpKind::matmul: in = {x, w}; break;
            case diff::OpKind::add: in = {x, x}; break;
            case diff::OpKind::mul: in = {x, x}; break;
            case diff::OpKind::affine: in = {x, w, b}; break;
            case diff::OpKind::layer_norm: in = {x, Tensor::full({6}, 1.0), b}; break;
            case diff::OpKind::gelu: in = {x}; break;
            case diff::OpKind::softmax_over_last_axis: in = {x}; break;
            case diff::OpKind::mean: in = {x}; break;
            case diff::OpKind::sum_of_squares: in = {x}; break;
            case diff::OpKind::concat_last_axis: in = {x, x}; break;
            case diff::OpKind::slice:
                in = {x};
                attrs.axis = 2;
                attrs.start = 1;
                attrs.len = 3;
                break;
            case diff::OpKind::reshape:
                in = {x};
                attrs.shape = {8, 6};
                break;
            case diff::OpKind::broadcast_add: in = {x, b}; break;
        }
        Tensor y1 = diff::forward_op(kind, in, attrs);
        Tensor y2 = diff::forward_op(kind, in, attrs);
        REQUIRE(y1.size() == y2.size());
        for (int64_t i = 0; i < y1.size(); ++i)
            CHECK(y1.data()[static_cast<size_t>(i)] == y2.data()[static_cast<size_t>(i)]);
    }
}

TEST_CASE("f32 dtype quantizes op outputs to float") {
    DtypeScope scope(Dtype::f32);
    Tensor a = Tensor::from({1}, {1.0 / 3.0});
    CHECK(a.data()[0] == static_cast<double>(static_cast<float>(1.0 / 3.0)));
    Tensor c = diff::add(a, a);
    CHECK(c.data()[0] == static_cast<double>(static_cast<float>(a.data()[0] + a.data()[0])));
}

TEST_CASE("clone copies data under a fresh identity") {
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = a.clone();
    CHECK(b.id() != a.id());
    b.data()[0] = 9;
    CHECK(a.data()[0] == 1.0);
}

TEST_CASE("rng streams are reproducible") {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
    CHECK(a.permutation(17) == b.permutation(17));
    Rng c(124);
    bool differs = false;
    Rng a2(123);
    for (int i = 0; i < 10; ++i) differs |= a2.uniform() != c.uniform();
    CHECK(differs);
}
