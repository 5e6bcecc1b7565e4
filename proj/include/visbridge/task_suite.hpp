#pragma once

#include <string>
#include <vector>

#include "visbridge/flow.hpp"

namespace vb {

enum class EncoderKind { affine, orthogonal, mlp_nonlinear, multiscale_pyramid };
enum class EvalProtocol { probe_accuracy, per_token_mse, recall_at_k };

// Declaration of one synthetic task before the frozen maps exist.
struct TaskInstance {
    std::string name;
    EncoderKind encoder_kind = EncoderKind::affine;
    EvalProtocol eval_protocol = EvalProtocol::probe_accuracy;
    std::vector<int> level_factors = {1};
    int teacher_hidden = 128;  // mlp_nonlinear width
    int teacher_depth = 1;     // mlp_nonlinear hidden layer count
    // Index of an earlier affine task whose weights this task negates
    // (target = -other target), or -1. Used to build conflicting
    // velocity targets for the embedding ablation.
    int opposes = -1;
    // recall task: relative weight perturbation of the paired encoder.
    double pair_noise = 0.05;
};

struct WorldConfig {
    uint64_t seed = 1;
    int input_dim = 64;
    int grid_side = 4;
    int channels = 32;
    int n_train = 2000;
    int n_val = 512;
    int n_classes = 64;
    int task_embed_dim = 16;
    std::vector<TaskInstance> tasks;

    void validate() const;
};

// Frozen maps and labels of one task.
struct TaskArtifacts {
    TaskInstance inst;
    TaskSpec spec;
    std::vector<std::pair<std::string, diff::Tensor>> enc;  // encoder weights
    std::vector<std::pair<std::string, diff::Tensor>> dec;  // readout / paired encoder
    std::vector<int> labels_train, labels_val;              // classify only
};

// Deterministic frozen environment: inputs, the source encoder
// standing in for the foundation model, and per-task encoders,
// decoders and labels. Immutable after generation.
struct SyntheticWorld {
    WorldConfig cfg;
    diff::Tensor train_x, val_x;  // [n, input_dim]
    diff::Tensor src_w, src_b;    // input -> P*D tokens
    std::vector<TaskArtifacts> tasks;

    int tokens() const { return cfg.grid_side * cfg.grid_side; }
};

SyntheticWorld generate_world(const WorldConfig& cfg);

// Source tokens [n, P, D] for raw inputs x.
diff::Tensor source_tokens(const SyntheticWorld& w, const diff::Tensor& x);

// Target tokens per level for a task (single entry unless the task is
// a multi-scale pyramid).
std::vector<diff::Tensor> task_targets(const SyntheticWorld& w, int task, const diff::Tensor& x);

// Mean over the token axis: [n, P, D] -> [n, D].
diff::Tensor mean_pool_tokens(const diff::Tensor& r);

// Teacher labels (argmax of the frozen readout on the task's own
// target tokens) for arbitrary inputs.
std::vector<int> classify_labels(const SyntheticWorld& w, int task, const diff::Tensor& x);

enum class AnchorMode { tokens, noise };

// Stacked per-level (source, target) arrays for one task and split.
// AnchorMode::noise freezes unit-Gaussian anchors and carries the
// pooled source token as extra conditioning instead.
TaskData materialize(const SyntheticWorld& w, int task, bool train_split,
                     AnchorMode anchor = AnchorMode::tokens);

// The thing being evaluated: a flow field integrated N steps, the
// direct one-pass regressor, or the exact straight-line oracle field
// (which no network expresses; used to validate the harness).
struct EvalModel {
    enum class Kind { flow, direct, oracle } kind = Kind::flow;
    const VelocityParams* params = nullptr;  // required unless oracle
};

struct MetricValue {
    std::string name;
    double value = 0.0;
};

struct MetricsRecord {
    int task_id = 0;
    std::string task_name;
    std::string split = "val";
    std::vector<MetricValue> metrics;

    double metric(const std::string& name) const;  // throws if absent
};

// Integrate the model over the split and apply the frozen decoder:
// probe accuracy, per-token MSE per level, or recall@{1,5,10}.
MetricsRecord eval_zero_shot(const EvalModel& model, const SyntheticWorld& w, int task, int N,
                             int eval_batch = 256);

// Same transport, but the classify readout is retrained on the train
// split's flow outputs (field frozen, teacher-initialized); the better
// of {teacher, retrained} on the train split is kept. 0 epochs keeps
// the teacher readout, i.e. the zero-shot protocol.
MetricsRecord eval_fine_tuned(const EvalModel& model, const SyntheticWorld& w, int task, int N,
                              int decoder_epochs, int eval_batch = 256);

// Trains the same architecture to regress targets from sources in one
// pass, with the given budget, then evaluates it.
MetricsRecord osd_baseline(const SyntheticWorld& w, int task, const ArchDescriptor& arch,
                           const FlowConfig& cfg, VelocityParams* out_params = nullptr);

// Flow trained from frozen Gaussian anchors with the pooled source
// token appended to the conditioning vector; evaluated zero-shot.
MetricsRecord noise_anchor_baseline(const SyntheticWorld& w, int task, const ArchDescriptor& arch,
                                    const FlowConfig& cfg, VelocityParams* out_params = nullptr);

struct AblationRow {
    std::string variant;
    std::vector<MetricValue> metrics;

    double metric(const std::string& name) const;
};

// Trains the circular, frozen-random and shared-constant task-embedding
// variants over every task in the world with identical budgets.
// Reported per variant: per-task final-epoch losses and their mean.
std::vector<AblationRow> task_embed_ablation(const SyntheticWorld& w, const ArchDescriptor& arch,
                                             const FlowConfig& cfg);

// Worlds round-trip through the same container format as checkpoints,
// so a run is reproducible from the world file plus a checkpoint.
void save_world(const std::string& path, const SyntheticWorld& w);
SyntheticWorld load_world(const std::string& path);

const char* encoder_kind_name(EncoderKind k);
EncoderKind encoder_kind_from(const std::string& s);
const char* eval_protocol_name(EvalProtocol p);
EvalProtocol eval_protocol_from(const std::string& s);

}  // namespace vb
