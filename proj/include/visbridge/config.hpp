#pragma once

#include <string>
#include <vector>

#include "visbridge/task_suite.hpp"

namespace vb {

// Flat run description, parseable from a key=value file. Every field
// below is a key with this default; unknown keys are rejected by name.
struct RunConfig {
    // world
    uint64_t world_seed = 1;
    int input_dim = 64;
    int grid_side = 4;
    int channels = 32;
    int n_train = 2000;
    int n_val = 512;
    int n_classes = 64;
    int task_embed_dim = 16;
    std::vector<std::string> tasks = {"classify_affine"};  // preset names, comma separated

    // training
    int k_steps = 1000;  // path discretization K
    int steps = 10;      // integration steps N
    int epochs = 20;
    int batch_size = 32;
    double lr = 4e-3;
    double weight_decay = 0.01;
    uint64_t seed = 1;
    bool k_inclusive = false;

    // architecture
    int n_blocks = 4;
    int d_model = 64;
    int n_heads = 4;
    int mlp_ratio = 4;
    std::string mixing = "attention";  // attention | mlp_mixer
    bool positional = false;

    // mode flags
    bool per_task_training = false;
    bool pooled_similarity = false;
    bool noise_anchor = false;
    std::string embed_variant = "circular";  // circular | random | constant

    // evaluation
    int task = 0;                    // task index for eval/analyze
    std::string mode = "zero_shot";  // zero_shot | fine_tuned
    int decoder_epochs = 3;
    int eval_batch = 256;
    std::string suite = "osd";  // ablate suite

    // output
    std::string out = "out";
};

// Applies one key=value pair; unknown key or unparseable value throws
// ConfigError naming the key.
void apply_kv(RunConfig& rc, const std::string& key, const std::string& value);

// Reads a key=value file ('#' comments, blank lines ignored).
RunConfig parse_config_file(const std::string& path);

// Every key with its current value, one per line, in a fixed order.
// Feeding the echo back through the parser reproduces the config.
std::string config_echo(const RunConfig& rc);

// Known task presets by name; ConfigError on an unknown name. The
// "opposing" preset resolves its counterpart at expansion time.
TaskInstance task_preset(const std::string& name);

WorldConfig world_config(const RunConfig& rc);
FlowConfig flow_config(const RunConfig& rc);
// Architecture bound to a world's dims; num_levels spans the widest
// task in the world.
ArchDescriptor arch_config(const RunConfig& rc, const WorldConfig& wc);

}  // namespace vb
