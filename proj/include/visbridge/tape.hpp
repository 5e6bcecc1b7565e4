#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "visbridge/tensor.hpp"

namespace vb::diff {

class GradTape;

// Gradient buffers accumulated during backward. Buffers exist only for
// values on the gradient path; everything else reads back as zero.
class GradStore {
  public:
    explicit GradStore(const GradTape* tape) : tape_(tape) {}

    // True when a value participates in differentiation (leaf parameter
    // or intermediate recorded by this tape).
    bool wants(const detail::NodePtr& n) const;

    // Accumulation buffer for a node, created zero-filled on first use.
    std::vector<double>& acc(const detail::NodePtr& n);

    // Buffer for a node or nullptr when no gradient has flowed into it.
    const std::vector<double>* find(int64_t id) const;

    std::unordered_map<int64_t, std::vector<double>>& raw() { return grads_; }

  private:
    const GradTape* tape_;
    std::unordered_map<int64_t, std::vector<double>> grads_;
};

// Result of backward(): gradient lookup by tensor identity.
class GradMap {
  public:
    GradMap() = default;
    explicit GradMap(std::unordered_map<int64_t, std::vector<double>> g) : grads_(std::move(g)) {}

    // Gradient of the loss w.r.t. t; exact zeros when t did not participate.
    Tensor grad_of(const Tensor& t) const;
    bool has(const Tensor& t) const { return grads_.count(t.id()) > 0; }

  private:
    std::unordered_map<int64_t, std::vector<double>> grads_;
};

using BackwardFn = std::function<void(const std::vector<double>& gout, GradStore& gs)>;

// Ordered record of primitive ops. Activate to record; backward replays
// the record once, in reverse.
class GradTape {
  public:
    GradTape() = default;
    ~GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    void activate();
    void deactivate();
    static GradTape* active();

    struct OpRecord {
        const char* name;
        detail::NodePtr out;
        BackwardFn backward;
    };

    void record(const char* name, const std::vector<Tensor>& inputs, const Tensor& out,
                BackwardFn backward);

    // True when gradients must flow through this value.
    bool watching(const detail::NodePtr& n) const;

    size_t num_ops() const { return ops_.size(); }

    // Reverse sweep from a scalar loss recorded under this tape.
    GradMap backward(const Tensor& loss) const;

  private:
    std::vector<OpRecord> ops_;
    bool active_ = false;
};

// RAII activation of a fresh tape.
struct TapeScope {
    GradTape tape;
    TapeScope() { tape.activate(); }
    ~TapeScope() { tape.deactivate(); }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;
};

}  // namespace vb::diff
