#pragma once

#include <map>
#include <string>
#include <vector>

#include "visbridge/tape.hpp"
#include "visbridge/tensor.hpp"

namespace vb::opt {

// Named learnable arrays. std::map keeps iteration order stable across
// runs, which the determinism contract relies on.
using ParamMap = std::map<std::string, diff::Tensor>;

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// First/second moments per parameter name, plus the step counter used
// for bias correction. Serialized alongside params so a resumed run
// continues the exact same trajectory.
struct AdamWState {
    int64_t step = 0;
    std::map<std::string, std::vector<double>> m, v;
};

// One decoupled-weight-decay adaptive update, in place. Parameters are
// visited in name order; moments and params are requantized to the
// global dtype after the update.
void adamw_step(ParamMap& params, const diff::GradMap& grads, const AdamWConfig& cfg,
                AdamWState& state);

}  // namespace vb::opt
