#include "visbridge/optim.hpp"

#include <cmath>

#include "visbridge/common.hpp"

namespace vb::opt {

void adamw_step(ParamMap& params, const diff::GradMap& grads, const AdamWConfig& cfg,
                AdamWState& state) {
    if (cfg.lr <= 0.0) throw ContractError("adamw_step: lr must be positive");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (auto& [name, p] : params) {
        diff::Tensor g = grads.grad_of(p);
        if (g.shape() != p.shape())
            throw ContractError("adamw_step: grad shape mismatch for " + name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(p.data().size(), 0.0);
        if (v.empty()) v.assign(p.data().size(), 0.0);
        auto& pd = p.data();
        const auto& gd = g.data();
        for (size_t i = 0; i < pd.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gd[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gd[i] * gd[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            pd[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * pd[i]);
        }
        diff::apply_dtype(pd);
        diff::apply_dtype(m);
        diff::apply_dtype(v);
    }
}

}  // namespace vb::opt
