#include "visbridge/embeddings.hpp"

#include <cmath>

#include "visbridge/common.hpp"
#include "visbridge/ops.hpp"

namespace vb {

void TaskSpec::validate() const {
    if (num_tasks < 1) throw ContractError("TaskSpec: num_tasks must be positive");
    if (task_id < 0 || task_id >= num_tasks)
        throw ContractError("TaskSpec: task_id outside [0, num_tasks)");
    if (embed_dim < 2 || embed_dim % 2 != 0)
        throw ContractError("TaskSpec: embed_dim must be even and >= 2");
}

double task_angle(int task_id, int num_tasks) {
    if (num_tasks < 1) throw ContractError("task_angle: num_tasks must be positive");
    int r = task_id % num_tasks;
    if (r < 0) r += num_tasks;
    return kTwoPi * static_cast<double>(r) / static_cast<double>(num_tasks);
}

std::vector<double> circular_embed_from_index(int task_id, int num_tasks, int embed_dim) {
    if (embed_dim < 2 || embed_dim % 2 != 0)
        throw ContractError("circular_embed: embed_dim must be even and >= 2");
    std::vector<double> out(static_cast<size_t>(embed_dim));
    int r = task_id % num_tasks;
    if (r < 0) r += num_tasks;
    for (int j = 1; j <= embed_dim / 2; ++j) {
        // j·θ_t mod 2π, via integer reduction of j·t mod T: keeps the
        // trig argument identical for t and t + T.
        const int64_t jt = static_cast<int64_t>(j) * r % num_tasks;
        const double ang = kTwoPi * static_cast<double>(jt) / static_cast<double>(num_tasks);
        out[static_cast<size_t>(2 * (j - 1))] = std::cos(ang);
        out[static_cast<size_t>(2 * (j - 1) + 1)] = std::sin(ang);
    }
    return out;
}

std::vector<double> circular_task_embed(const TaskSpec& spec) {
    spec.validate();
    return circular_embed_from_index(spec.task_id, spec.num_tasks, spec.embed_dim);
}

std::vector<double> step_embed(double tau, int d_model) {
    if (!(tau >= 0.0 && tau <= 1.0)) throw ContractError("step_embed: tau outside [0,1]");
    if (d_model < 2 || d_model % 2 != 0)
        throw ContractError("step_embed: d_model must be even and >= 2");
    const int half = d_model / 2;
    std::vector<double> out(static_cast<size_t>(d_model));
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        const double arg = tau * 1000.0 * freq;
        out[static_cast<size_t>(2 * i)] = std::cos(arg);
        out[static_cast<size_t>(2 * i + 1)] = std::sin(arg);
    }
    return out;
}

void ScaleTable::validate(int base_grid_side) const {
    if (num_levels < 1) throw ContractError("ScaleTable: num_levels must be positive");
    if (static_cast<int>(level_factors.size()) != num_levels)
        throw ContractError("ScaleTable: one factor required per level");
    for (int f : level_factors) {
        if (f < 1) throw ContractError("ScaleTable: factors must be positive");
        if (base_grid_side % f != 0)
            throw ContractError("ScaleTable: factor must divide the base grid side");
    }
}

diff::Tensor scale_embed(const diff::Tensor& table, int level) {
    if (table.rank() != 2) throw ContractError("scale_embed: table must be [levels, d_model]");
    if (level < 0 || level >= table.shape()[0])
        throw ContractError("scale_embed: level out of range");
    return diff::reshape(diff::slice(table, 0, level, 1), {table.shape()[1]});
}

}  // namespace vb
