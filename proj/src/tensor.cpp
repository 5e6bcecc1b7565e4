#include "visbridge/tensor.hpp"

#include <atomic>
#include <string>

namespace vb::diff {

namespace detail {

int64_t numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw ContractError("tensor shape extents must be positive");
        n *= e;
    }
    return n;
}

namespace {
std::atomic<int64_t> g_next_id{1};
}

NodePtr make_node(std::vector<int> shape, std::vector<double> data) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
        throw ContractError("tensor data length does not match shape product");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->id = g_next_id.fetch_add(1);
    return n;
}

}  // namespace detail

void apply_dtype(std::vector<double>& data) {
    if (default_dtype() == Dtype::f32) {
        for (double& v : data) v = static_cast<double>(static_cast<float>(v));
    }
}

Tensor Tensor::zeros(std::vector<int> shape) {
    std::vector<double> d(static_cast<size_t>(detail::numel(shape)), 0.0);
    return wrap(detail::make_node(std::move(shape), std::move(d)));
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    std::vector<double> d(static_cast<size_t>(detail::numel(shape)), value);
    apply_dtype(d);
    return wrap(detail::make_node(std::move(shape), std::move(d)));
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
    apply_dtype(data);
    return wrap(detail::make_node(std::move(shape), std::move(data)));
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
    std::vector<double> d(static_cast<size_t>(detail::numel(shape)));
    for (double& v : d) v = stddev * rng.normal();
    apply_dtype(d);
    return wrap(detail::make_node(std::move(shape), std::move(d)));
}

const std::vector<int>& Tensor::shape() const {
    if (!node_) throw ContractError("undefined tensor");
    return node_->shape;
}

int64_t Tensor::size() const { return static_cast<int64_t>(data().size()); }

double Tensor::value() const {
    if (size() != 1) throw ContractError("Tensor::value requires a scalar tensor");
    return data()[0];
}

std::vector<double>& Tensor::data() {
    if (!node_) throw ContractError("undefined tensor");
    return node_->data;
}

const std::vector<double>& Tensor::data() const {
    if (!node_) throw ContractError("undefined tensor");
    return node_->data;
}

int64_t Tensor::id() const {
    if (!node_) throw ContractError("undefined tensor");
    return node_->id;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    if (!node_) throw ContractError("undefined tensor");
    node_->requires_grad = v;
    return *this;
}

Tensor Tensor::clone() const {
    auto n = detail::make_node(shape(), data());
    n->requires_grad = node_->requires_grad;
    return wrap(std::move(n));
}

bool Tensor::same_data(const Tensor& other) const {
    return defined() && other.defined() && node_->data == other.node_->data &&
           node_->shape == other.node_->shape;
}

}  // namespace vb::diff
