#include "visbridge/velocity_field.hpp"

#include <cmath>
#include <string>

#include "visbridge/common.hpp"
#include "visbridge/ops.hpp"

namespace vb {

using diff::Tensor;

void ArchDescriptor::validate() const {
    if (n_blocks < 1 || d_model < 1 || channels < 1 || cond_dim < 1 || mlp_ratio < 1)
        throw ContractError("ArchDescriptor: sizes must be positive");
    if (task_embed_dim < 2 || task_embed_dim % 2 != 0)
        throw ContractError("ArchDescriptor: task_embed_dim must be even and >= 2");
    if (d_model % 2 != 0) throw ContractError("ArchDescriptor: d_model must be even");
    if (mixing == Mixing::attention && (n_heads < 1 || d_model % n_heads != 0))
        throw ContractError("ArchDescriptor: d_model must divide evenly across heads");
    if (mixing == Mixing::mlp_mixer && n_tokens < 1)
        throw ContractError("ArchDescriptor: mixer needs a positive token count");
    if (num_levels < 1 || num_tasks < 1)
        throw ContractError("ArchDescriptor: level/task counts must be positive");
    if (cond_extra < 0) throw ContractError("ArchDescriptor: cond_extra must be >= 0");
}

int ArchDescriptor::cond_input_dim() const { return 2 * d_model + task_embed_dim + cond_extra; }

VelocityParams init_params(const ArchDescriptor& arch, uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    VelocityParams p;
    p.arch = arch;
    auto w = [&](const std::string& name, std::vector<int> shape, double stddev) {
        Tensor t = stddev == 0.0 ? Tensor::zeros(shape) : Tensor::randn(shape, rng, stddev);
        t.set_requires_grad(true);
        p.tensors.emplace(name, std::move(t));
    };
    const int dm = arch.d_model;
    const double wd = 1.0 / std::sqrt(static_cast<double>(dm));

    w("in_proj.w", {arch.channels, dm}, 1.0 / std::sqrt(static_cast<double>(arch.channels)));
    w("in_proj.b", {dm}, 0.0);
    w("out_proj.w", {dm, arch.channels}, wd);
    w("out_proj.b", {arch.channels}, 0.0);
    w("scale_table", {arch.num_levels, dm}, 0.02);
    const int ci = arch.cond_input_dim();
    w("cond.fc1.w", {ci, arch.cond_dim}, 1.0 / std::sqrt(static_cast<double>(ci)));
    w("cond.fc1.b", {arch.cond_dim}, 0.0);
    w("cond.fc2.w", {arch.cond_dim, arch.cond_dim},
      1.0 / std::sqrt(static_cast<double>(arch.cond_dim)));
    w("cond.fc2.b", {arch.cond_dim}, 0.0);
    if (arch.positional) w("pos_embed", {arch.n_tokens, dm}, 0.02);

    for (int i = 0; i < arch.n_blocks; ++i) {
        const std::string b = "blk" + std::to_string(i) + ".";
        {
            Tensor ones = Tensor::full({dm}, 1.0);
            ones.set_requires_grad(true);
            p.tensors.emplace(b + "ln1.g", std::move(ones));
        }
        w(b + "ln1.b", {dm}, 0.0);
        if (arch.mixing == Mixing::attention) {
            w(b + "attn.wq", {dm, dm}, wd);
            w(b + "attn.bq", {dm}, 0.0);
            w(b + "attn.wk", {dm, dm}, wd);
            w(b + "attn.bk", {dm}, 0.0);
            w(b + "attn.wv", {dm, dm}, wd);
            w(b + "attn.bv", {dm}, 0.0);
            w(b + "attn.wo", {dm, dm}, wd);
            w(b + "attn.bo", {dm}, 0.0);
        } else {
            const int nt = arch.n_tokens;
            w(b + "tok.w1", {nt, nt}, 1.0 / std::sqrt(static_cast<double>(nt)));
            w(b + "tok.b1", {nt, 1}, 0.0);
            w(b + "tok.w2", {nt, nt}, 1.0 / std::sqrt(static_cast<double>(nt)));
            w(b + "tok.b2", {nt, 1}, 0.0);
        }
        {
            Tensor ones = Tensor::full({dm}, 1.0);
            ones.set_requires_grad(true);
            p.tensors.emplace(b + "ln2.g", std::move(ones));
        }
        w(b + "ln2.b", {dm}, 0.0);
        w(b + "mlp.fc1.w", {dm, arch.mlp_ratio * dm}, wd);
        w(b + "mlp.fc1.b", {arch.mlp_ratio * dm}, 0.0);
        w(b + "mlp.fc2.w", {arch.mlp_ratio * dm, dm},
          1.0 / std::sqrt(static_cast<double>(arch.mlp_ratio * dm)));
        w(b + "mlp.fc2.b", {dm}, 0.0);
        // Zero-init: all scale/shift/gate outputs start at 0, so the
        // block is an exact identity until training moves them.
        w(b + "mod.w", {arch.cond_dim, 6 * dm}, 0.0);
        w(b + "mod.b", {6 * dm}, 0.0);
    }
    return p;
}

std::vector<double> task_embed_vector(const ArchDescriptor& arch, const TaskSpec& spec) {
    switch (arch.task_embed) {
        case TaskEmbedVariant::circular:
            return circular_task_embed(spec);
        case TaskEmbedVariant::random_frozen: {
            spec.validate();
            Rng rng(mix_seed(0x7A5Cu, static_cast<uint64_t>(spec.task_id)));
            std::vector<double> v(static_cast<size_t>(spec.embed_dim));
            // std 1/sqrt(2) matches the circular code's norm^2 = d/2
            // in expectation.
            for (double& x : v) x = rng.normal() / std::sqrt(2.0);
            return v;
        }
        case TaskEmbedVariant::constant: {
            spec.validate();
            Rng rng(mix_seed(0x7A5Cu, 0xFFFFu));
            std::vector<double> v(static_cast<size_t>(spec.embed_dim));
            for (double& x : v) x = rng.normal() / std::sqrt(2.0);
            return v;
        }
    }
    throw ContractError("task_embed_vector: unknown variant");
}

namespace {

Tensor attention_mix(const opt::ParamMap& t, const std::string& b, const Tensor& h, int n_heads) {
    const int dm = h.shape()[2];
    const int dh = dm / n_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor q = diff::affine(h, t.at(b + "attn.wq"), t.at(b + "attn.bq"));
    Tensor k = diff::affine(h, t.at(b + "attn.wk"), t.at(b + "attn.bk"));
    Tensor v = diff::affine(h, t.at(b + "attn.wv"), t.at(b + "attn.bv"));
    Tensor merged;
    for (int hd = 0; hd < n_heads; ++hd) {
        Tensor qh = diff::slice(q, 2, hd * dh, dh);
        Tensor kh = diff::slice(k, 2, hd * dh, dh);
        Tensor vh = diff::slice(v, 2, hd * dh, dh);
        Tensor scores = diff::scale(diff::matmul(qh, kh, true), inv_sqrt_dh);
        Tensor att = diff::softmax_over_last_axis(scores);
        Tensor oh = diff::matmul(att, vh);
        merged = hd == 0 ? oh : diff::concat_last_axis(merged, oh);
    }
    return diff::affine(merged, t.at(b + "attn.wo"), t.at(b + "attn.bo"));
}

Tensor mixer_mix(const opt::ParamMap& t, const std::string& b, const Tensor& h, int n_tokens) {
    if (h.shape()[1] != n_tokens)
        throw ContractError("predict_velocity: mixer bound to a different token count");
    Tensor m = diff::matmul(t.at(b + "tok.w1"), h);
    m = diff::gelu(diff::broadcast_add(m, t.at(b + "tok.b1")));
    m = diff::matmul(t.at(b + "tok.w2"), m);
    return diff::broadcast_add(m, t.at(b + "tok.b2"));
}

}  // namespace

Tensor predict_velocity(const VelocityParams& params, const Tensor& r, double tau, int level,
                        const TaskSpec& spec, const Tensor* cond_extra) {
    const ArchDescriptor& arch = params.arch;
    if (r.rank() != 3) throw ContractError("predict_velocity: input must be [batch, tokens, channels]");
    if (r.shape()[2] != arch.channels)
        throw ContractError("predict_velocity: channel count differs from the configured width");
    if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("predict_velocity: tau outside [0,1]");
    if (level < 0 || level >= arch.num_levels)
        throw ContractError("predict_velocity: level out of range");
    spec.validate();
    if (spec.embed_dim != arch.task_embed_dim || spec.num_tasks != arch.num_tasks)
        throw ContractError("predict_velocity: task spec does not match the trained conditioning");
    if (arch.cond_extra > 0) {
        if (cond_extra == nullptr)
            throw ContractError("predict_velocity: arch declares extra conditioning, none given");
        if (cond_extra->rank() != 2 || cond_extra->shape()[0] != r.shape()[0] ||
            cond_extra->shape()[1] != arch.cond_extra)
            throw ContractError("predict_velocity: extra conditioning must be [batch, cond_extra]");
    } else if (cond_extra != nullptr) {
        throw ContractError("predict_velocity: extra conditioning given but arch declares none");
    }

    const auto& t = params.tensors;
    const int B = r.shape()[0];
    const int dm = arch.d_model;

    // Fused conditioning vector: step ⊕ scale-row ⊕ task (⊕ extras),
    // pushed through a small MLP. Shared across tokens; per-sample only
    // when extras are present.
    Tensor step = Tensor::from({1, dm}, step_embed(tau, dm));
    Tensor task = Tensor::from({1, spec.embed_dim}, task_embed_vector(arch, spec));
    Tensor srow = diff::reshape(scale_embed(t.at("scale_table"), level), {1, dm});
    Tensor cond_in = diff::concat_last_axis(diff::concat_last_axis(step, srow), task);
    if (arch.cond_extra > 0) {
        Tensor ones = Tensor::full({B, 1}, 1.0);
        cond_in = diff::concat_last_axis(diff::matmul(ones, cond_in), *cond_extra);
    }
    Tensor c = diff::gelu(diff::affine(cond_in, t.at("cond.fc1.w"), t.at("cond.fc1.b")));
    c = diff::affine(c, t.at("cond.fc2.w"), t.at("cond.fc2.b"));
    const int be = c.shape()[0];

    Tensor x = diff::affine(r, t.at("in_proj.w"), t.at("in_proj.b"));
    if (arch.positional) {
        if (r.shape()[1] != arch.n_tokens)
            throw ContractError("predict_velocity: positional table bound to a different token count");
        x = diff::broadcast_add(x, t.at("pos_embed"));
    }

    for (int i = 0; i < arch.n_blocks; ++i) {
        const std::string b = "blk" + std::to_string(i) + ".";
        Tensor mod = diff::affine(c, t.at(b + "mod.w"), t.at(b + "mod.b"));
        auto piece = [&](int j) { return diff::reshape(diff::slice(mod, 1, j * dm, dm), {be, 1, dm}); };
        Tensor sh1 = piece(0), sc1 = piece(1), g1 = piece(2);
        Tensor sh2 = piece(3), sc2 = piece(4), g2 = piece(5);

        Tensor h = diff::layer_norm(x, t.at(b + "ln1.g"), t.at(b + "ln1.b"));
        h = diff::broadcast_add(diff::mul(h, diff::add_scalar(sc1, 1.0)), sh1);
        Tensor a = arch.mixing == Mixing::attention ? attention_mix(t, b, h, arch.n_heads)
                                                    : mixer_mix(t, b, h, arch.n_tokens);
        x = diff::add(x, diff::mul(a, g1));

        h = diff::layer_norm(x, t.at(b + "ln2.g"), t.at(b + "ln2.b"));
        h = diff::broadcast_add(diff::mul(h, diff::add_scalar(sc2, 1.0)), sh2);
        Tensor m = diff::affine(h, t.at(b + "mlp.fc1.w"), t.at(b + "mlp.fc1.b"));
        m = diff::affine(diff::gelu(m), t.at(b + "mlp.fc2.w"), t.at(b + "mlp.fc2.b"));
        x = diff::add(x, diff::mul(m, g2));
    }
    return diff::affine(x, t.at("out_proj.w"), t.at("out_proj.b"));
}

}  // namespace vb
