#pragma once

#include <vector>

#include "visbridge/tensor.hpp"

namespace vb {

enum class DecoderKind { classify, dense_regress, retrieve };

// Identifies one task inside a world of num_tasks tasks and fixes the
// width of its circular embedding.
struct TaskSpec {
    int task_id = 0;
    int num_tasks = 1;
    int embed_dim = 16;  // must be even, >= 2
    DecoderKind decoder_kind = DecoderKind::classify;

    void validate() const;
};

// Angle of task t on the unit circle, reduced mod num_tasks first so
// t and t + num_tasks give bitwise-identical downstream trig.
double task_angle(int task_id, int num_tasks);

// [cos θ, sin θ, cos 2θ, sin 2θ, ..., cos((d/2)θ), sin((d/2)θ)] for
// θ = 2π·t/T. Squared norm is d/2 by construction. No range check on
// task_id; periodicity in t is exact because each frequency's angle is
// reduced mod the period before evaluation.
std::vector<double> circular_embed_from_index(int task_id, int num_tasks, int embed_dim);

// Range-checked wrapper over the formula above.
std::vector<double> circular_task_embed(const TaskSpec& spec);

// Sinusoidal features of normalized time tau in [0,1] over d_model/2
// geometric frequencies, interleaved [cos, sin, cos, sin, ...].
// tau = 0 gives cosine slots 1 and sine slots 0.
std::vector<double> step_embed(double tau, int d_model);

// Shape of the learnable per-level table and the pooling factor each
// level applies to the base token grid. The rows themselves live in
// the parameter map (name "scale_table") so the optimizer sees them.
struct ScaleTable {
    int num_levels = 1;
    int d_model = 64;
    std::vector<int> level_factors = {1};

    void validate(int base_grid_side) const;
};

// Row lookup into a [L, d_model] table as a differentiable slice, so
// gradients land only in the selected row.
diff::Tensor scale_embed(const diff::Tensor& table, int level);

}  // namespace vb
