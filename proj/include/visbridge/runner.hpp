#pragma once

#include <string>
#include <vector>

#include "visbridge/config.hpp"

namespace vb {

// A trained model on disk: parameters, optimizer moments, and the
// metadata needed to rebuild the architecture and resume.
struct Checkpoint {
    VelocityParams params;
    opt::AdamWState ostate;
    int epoch = 0;
    uint64_t seed = 0;
    std::string objective = "velocity";  // velocity | direct
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Subcommand bodies. All of them throw (ConfigError, NumericError,
// IoError, ContractError); the binary maps exceptions to exit codes.
void cmd_gen_world(const RunConfig& rc);
void cmd_train(const RunConfig& rc, const std::string& world_path,
               const std::string& resume_path);
void cmd_eval(const RunConfig& rc, const std::string& checkpoint_path,
              const std::string& world_path, bool oracle);
void cmd_ablate(const RunConfig& rc, const std::string& world_path);
void cmd_analyze(const RunConfig& rc, const std::vector<std::string>& checkpoint_paths,
                 const std::string& world_path, bool oracle);

}  // namespace vb
