#pragma once

#include <cstdint>

#include "visbridge/embeddings.hpp"
#include "visbridge/optim.hpp"
#include "visbridge/tensor.hpp"

namespace vb {

enum class Mixing { attention, mlp_mixer };

// How the model encodes the task index: the circular sinusoidal code,
// a frozen random vector per task, or one shared constant vector (the
// no-task-information control).
enum class TaskEmbedVariant { circular, random_frozen, constant };

// Everything the parameter layout depends on. Two descriptors with
// equal fields produce identically named and shaped parameter sets.
struct ArchDescriptor {
    int n_blocks = 4;
    int d_model = 64;
    Mixing mixing = Mixing::attention;
    int n_heads = 4;
    int channels = 32;  // token channel count D
    int task_embed_dim = 16;
    int cond_dim = 64;  // fused conditioning vector width
    int num_levels = 1;
    int num_tasks = 1;
    int mlp_ratio = 4;
    // mlp_mixer only: token-mixing weights bind to a fixed token count,
    // so mixer fields accept exactly this many tokens. Attention is
    // token-count agnostic.
    int n_tokens = 16;
    // Extra per-sample channels appended to the conditioning input
    // (used by the noise-anchored variant to carry the pooled source
    // token). 0 disables the path.
    int cond_extra = 0;
    bool positional = false;  // learned additive token embedding (off by default)
    TaskEmbedVariant task_embed = TaskEmbedVariant::circular;

    void validate() const;
    // step(d_model) + scale(d_model) + task(task_embed_dim) + cond_extra
    int cond_input_dim() const;
};

// The task conditioning vector under the arch's embedding variant.
std::vector<double> task_embed_vector(const ArchDescriptor& arch, const TaskSpec& spec);

struct VelocityParams {
    ArchDescriptor arch;
    opt::ParamMap tensors;
};

// Deterministic init for a given seed. Modulation projections start at
// zero so every block begins as an exact identity residual.
VelocityParams init_params(const ArchDescriptor& arch, uint64_t seed);

// f(r, tau, level, task): pre-norm token-mixing blocks, each modulated
// by scale/shift/gate vectors produced from the fused conditioning
// vector. r is [B, P, D]; the result has the same shape.
// cond_extra must be [B, arch.cond_extra] when the arch declares extra
// conditioning channels, and absent otherwise.
diff::Tensor predict_velocity(const VelocityParams& params, const diff::Tensor& r, double tau,
                              int level, const TaskSpec& spec,
                              const diff::Tensor* cond_extra = nullptr);

}  // namespace vb
