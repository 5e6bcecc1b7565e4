#pragma once

#include <span>
#include <vector>

#include "visbridge/tape.hpp"
#include "visbridge/tensor.hpp"

namespace vb::diff {

// Differentiable primitives. Every op validates shapes, checks the
// output for NaN/Inf, quantizes to the global dtype, and records itself
// on the active tape when one of its inputs is on the gradient path.

// C = A · B. A is [..., m, k]; B is [..., k, n] ([..., n, k] with
// transpose_b). Either operand may omit the leading batch dims and is
// then broadcast across them.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Elementwise sum; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);

// Elementwise product with right-aligned broadcasting (each aligned dim
// equal or 1).
Tensor mul(const Tensor& a, const Tensor& b);

// y = x·W + b over the last axis: x [..., in], W [in, out], b [out].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Normalize over the last axis (population variance, eps inside the
// sqrt), then rescale: y = gamma * xhat + beta. gamma/beta are [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);
inline constexpr double kLayerNormEps = 1e-5;

// Exact GELU: x * Phi(x) with the Gaussian CDF.
Tensor gelu(const Tensor& x);

// Row-stable softmax over the last axis.
Tensor softmax_over_last_axis(const Tensor& x);

// Mean of all elements, accumulated sequentially in row-major order.
Tensor mean(const Tensor& x);

// Sum of squared elements, accumulated sequentially in row-major order.
Tensor sum_of_squares(const Tensor& x);

// Concatenate along the last axis; all other extents must match.
Tensor concat_last_axis(const Tensor& a, const Tensor& b);

// Contiguous slice [start, start+len) along one axis.
Tensor slice(const Tensor& x, int axis, int start, int len);

// Same data, new extents; products must match.
Tensor reshape(const Tensor& x, std::vector<int> new_shape);

// x + v where v broadcasts against x right-aligned (dims equal or 1;
// missing leading dims treated as 1).
Tensor broadcast_add(const Tensor& x, const Tensor& v);

// --- composed helpers (no new primitives) ---

// a - b via add/mul with a constant.
Tensor sub(const Tensor& a, const Tensor& b);
// c * x via broadcast mul with a constant scalar.
Tensor scale(const Tensor& x, double c);
// x + c elementwise.
Tensor add_scalar(const Tensor& x, double c);

// --- generic dispatch (used by the gradient sweep) ---

enum class OpKind {
    matmul,
    add,
    mul,
    affine,
    layer_norm,
    gelu,
    softmax_over_last_axis,
    mean,
    sum_of_squares,
    concat_last_axis,
    slice,
    reshape,
    broadcast_add,
};

struct OpAttrs {
    bool transpose_b = false;
    int axis = 0;
    int start = 0;
    int len = 0;
    std::vector<int> shape;
};

const char* op_name(OpKind kind);
std::vector<OpKind> all_op_kinds();
Tensor forward_op(OpKind kind, std::span<const Tensor> inputs, const OpAttrs& attrs = {});

}  // namespace vb::diff
