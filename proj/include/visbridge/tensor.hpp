#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "visbridge/common.hpp"

namespace vb::diff {

class GradTape;

namespace detail {

// Value storage shared by Tensor handles. Identity (id) is what the
// gradient map is keyed on.
struct Node {
    std::vector<int> shape;
    std::vector<double> data;
    int64_t id = 0;
    bool requires_grad = false;
    // Tape that recorded the op producing this node, if any.
    const GradTape* tape_mark = nullptr;
};

using NodePtr = std::shared_ptr<Node>;

int64_t numel(const std::vector<int>& shape);

}  // namespace detail

// Dense row-major array of reals. Copying a Tensor copies the handle;
// clone() copies the data. Precision follows the global dtype flag:
// in f32 mode every constructor and op quantizes values to float.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape);
    static Tensor full(std::vector<int> shape, double value);
    static Tensor from(std::vector<int> shape, std::vector<double> data);
    static Tensor scalar(double value);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int64_t size() const;
    // Scalar read; contract error unless size() == 1.
    double value() const;

    std::vector<double>& data();
    const std::vector<double>& data() const;

    int64_t id() const;
    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);

    // Deep copy with a fresh identity.
    Tensor clone() const;
    bool same_data(const Tensor& other) const;

    detail::NodePtr node() const { return node_; }
    static Tensor wrap(detail::NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

  private:
    detail::NodePtr node_;
};

// Quantize a buffer to float precision when the global dtype is f32.
void apply_dtype(std::vector<double>& data);

}  // namespace vb::diff
