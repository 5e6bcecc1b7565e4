#include "visbridge/tape.hpp"

namespace vb::diff {

namespace {
GradTape* g_active_tape = nullptr;
}

bool GradStore::wants(const detail::NodePtr& n) const {
    return n->requires_grad || n->tape_mark == tape_;
}

std::vector<double>& GradStore::acc(const detail::NodePtr& n) {
    auto it = grads_.find(n->id);
    if (it == grads_.end())
        it = grads_.emplace(n->id, std::vector<double>(n->data.size(), 0.0)).first;
    return it->second;
}

const std::vector<double>* GradStore::find(int64_t id) const {
    auto it = grads_.find(id);
    return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradMap::grad_of(const Tensor& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return Tensor::zeros(t.shape());
    return Tensor::from(t.shape(), it->second);
}

GradTape::~GradTape() {
    if (active_) deactivate();
}

void GradTape::activate() {
    if (g_active_tape != nullptr) throw ContractError("a gradient tape is already active");
    g_active_tape = this;
    active_ = true;
}

void GradTape::deactivate() {
    if (g_active_tape != this) throw ContractError("deactivating a tape that is not active");
    g_active_tape = nullptr;
    active_ = false;
}

GradTape* GradTape::active() { return g_active_tape; }

bool GradTape::watching(const detail::NodePtr& n) const {
    return n->requires_grad || n->tape_mark == this;
}

void GradTape::record(const char* name, const std::vector<Tensor>& inputs, const Tensor& out,
                      BackwardFn backward) {
    bool participates = false;
    for (const Tensor& t : inputs) {
        if (t.defined() && watching(t.node())) {
            participates = true;
            break;
        }
    }
    if (!participates) return;
    out.node()->tape_mark = this;
    ops_.push_back(OpRecord{name, out.node(), std::move(backward)});
}

GradMap GradTape::backward(const Tensor& loss) const {
    if (loss.size() != 1) throw ContractError("backward: loss must be a scalar");
    if (loss.node()->tape_mark != this)
        throw ContractError("backward: loss was not produced under this tape");

    GradStore store(this);
    store.acc(loss.node())[0] = 1.0;

    // Each recorded op is visited exactly once, in reverse order.
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
        const std::vector<double>* gout = store.find(it->out->id);
        if (gout == nullptr) continue;  // no gradient flowed into this value
        it->backward(*gout, store);
    }
    return GradMap(std::move(store.raw()));
}

}  // namespace vb::diff
