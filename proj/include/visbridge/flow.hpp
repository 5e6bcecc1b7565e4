#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "visbridge/optim.hpp"
#include "visbridge/velocity_field.hpp"

namespace vb {

// One batch of token-grid representations at a single scale level.
struct RepBatch {
    diff::Tensor data;  // [B, P, D], P = grid_side^2
    int level = 0;
    int grid_side = 0;

    void validate() const;
};

// The same batch at every scale level, level 0 finest.
struct MultiScaleTokens {
    std::vector<RepBatch> per_level;
};

struct FlowConfig {
    int K = 1000;        // training discretization of the path
    int N = 10;          // inference integration steps
    int epochs = 20;
    double lr = 4e-3;
    double weight_decay = 0.01;
    int batch_size = 32;
    uint64_t seed = 1;
    // Sample k over {0..K} instead of the default {0..K-1}.
    bool k_inclusive = false;

    void validate() const;
};

// Flattened state snapshots of one integration run: exactly N+1 rows
// of [B, sum_l P_l * D], the first being the anchor state.
struct TrajectoryDump {
    std::vector<diff::Tensor> snapshots;
    int task_id = 0;
    int steps = 0;
    uint64_t seed = 0;
};

// Non-overlapping factor x factor average pooling per level. The first
// factor must be 1 so level 0 is the input verbatim.
MultiScaleTokens multiscale_sample(const RepBatch& r0, const std::vector<int>& factors);

// (1 - k/K) r0 + (k/K) rt, exact at both endpoints.
RepBatch interpolate(const RepBatch& r0, const RepBatch& rt, int k, int K);

// rt - r0: the straight-path velocity, independent of k.
RepBatch true_velocity(const RepBatch& r0, const RepBatch& rt);

// Aligned source/target pair at one level.
struct LevelPair {
    RepBatch source, target;
};

// One training batch across levels, plus optional per-sample extra
// conditioning rows [B, E].
struct TrainBatch {
    std::vector<LevelPair> levels;
    diff::Tensor cond_extra;
};

// What the network regresses: the path velocity at an interpolated
// state (flow matching) or the target itself from the source in one
// pass (the distillation baseline).
enum class TrainObjective { velocity, direct };

// One optimizer transaction: draw k, build per-level losses, average
// over every element of every level, backprop, step. Returns the loss.
double train_step(VelocityParams& params, const TrainBatch& batch, const TaskSpec& spec,
                  const FlowConfig& cfg, opt::AdamWState& ostate, Rng& rng,
                  TrainObjective objective = TrainObjective::velocity);

// Materialized dataset for one task: per level, all samples stacked
// into [n, P_l, D] arrays.
struct TaskData {
    TaskSpec spec;
    std::vector<int> level_factors;
    std::vector<int> grid_sides;
    std::vector<diff::Tensor> source_levels;
    std::vector<diff::Tensor> target_levels;
    diff::Tensor cond_extra_all;  // undefined or [n, E]

    int num_samples() const;
    void validate() const;
    TrainBatch gather(const std::vector<int>& rows) const;
};

struct EpochStats {
    int epoch = 0;
    int task_id = 0;
    double mean_loss = 0.0;
};

// Called after each epoch; receives the absolute epoch index just
// finished. Checkpointing and eval hooks live here so this module does
// no file I/O itself.
using EpochCallback =
    std::function<void(int epoch, const VelocityParams&, const opt::AdamWState&)>;

// Epochs of shuffled batches, tasks interleaved round-robin. Epoch e
// draws its shuffle and k values from seed ^ e, so a resumed run
// replays the exact schedule of an uninterrupted one.
std::vector<EpochStats> train(VelocityParams& params, const std::vector<TaskData>& tasks,
                              const FlowConfig& cfg, opt::AdamWState& ostate,
                              TrainObjective objective = TrainObjective::velocity,
                              int start_epoch = 0, const EpochCallback& on_epoch = {});

// Any velocity field usable by the integrator: (state, tau, level) ->
// velocity of the same shape. Lets tests drive the integrator with
// oracle fields no network can express.
using VelocityFn = std::function<diff::Tensor(const diff::Tensor& r, double tau, int level)>;

// N Euler updates per level with tau_n = n/N; no randomness. When dump
// is given it receives the N+1 flattened snapshots (levels
// concatenated per sample).
MultiScaleTokens euler_integrate_fn(const VelocityFn& field, const MultiScaleTokens& anchors,
                                    int N, TrajectoryDump* dump = nullptr);

// The same integration driven by the trained network.
MultiScaleTokens euler_integrate(const VelocityParams& params, const MultiScaleTokens& anchors,
                                 const TaskSpec& spec, int N,
                                 const diff::Tensor* cond_extra = nullptr,
                                 TrajectoryDump* dump = nullptr);

}  // namespace vb
