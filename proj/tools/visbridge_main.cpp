#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "visbridge/runner.hpp"

namespace {

// Flag overrides land on top of the config file, so the precedence is
// defaults < file < command line.
struct CommonArgs {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "key=value config file");
    auto track = [&args](const std::string& key) {
        return [&args, key](const std::string& value) { args.overrides.emplace_back(key, value); };
    };
    sub->add_option_function<std::string>("--seed", track("seed"), "training seed");
    sub->add_option_function<std::string>("--world-seed", track("world_seed"), "world seed");
    sub->add_option_function<std::string>("--steps", track("steps"), "integration steps N");
    sub->add_option_function<std::string>("--epochs", track("epochs"), "training epochs");
    sub->add_option_function<std::string>("--task", track("task"), "task index for eval/analyze");
    sub->add_option_function<std::string>("--tasks", track("tasks"), "comma list of task presets");
    sub->add_option_function<std::string>("--mode", track("mode"), "zero_shot | fine_tuned");
    sub->add_option_function<std::string>("--suite", track("suite"),
                                          "flow_steps | capacity | osd | noise_anchor | task_embed");
    sub->add_option_function<std::string>("--out", track("out"), "output directory");
    sub->add_option_function<std::string>("--lr", track("lr"), "learning rate");
    sub->add_option_function<std::string>("--batch-size", track("batch_size"), "batch size");
    sub->add_option_function<std::string>("--mixing", track("mixing"), "attention | mlp_mixer");
    sub->add_option_function<std::string>("--embed-variant", track("embed_variant"),
                                          "circular | random | constant");
    sub->add_option_function<std::string>("--noise-anchor", track("noise_anchor"),
                                          "train from Gaussian anchors (true/false)");
    sub->add_option_function<std::string>("--decoder-epochs", track("decoder_epochs"),
                                          "fine-tuned decoder epochs");
}

vb::RunConfig build_config(const CommonArgs& args) {
    vb::RunConfig rc;
    if (!args.config_path.empty()) rc = vb::parse_config_file(args.config_path);
    for (const auto& [key, value] : args.overrides) vb::apply_kv(rc, key, value);
    return rc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"flow transport between representation spaces"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, ablate_args, analyze_args;
    std::string train_world, train_resume;
    std::string eval_world, eval_checkpoint;
    std::string ablate_world;
    std::string analyze_world;
    std::vector<std::string> analyze_checkpoints;
    bool eval_oracle = false, analyze_oracle = false;

    CLI::App* gen = app.add_subcommand("gen-world", "generate and save a frozen synthetic world");
    add_common(gen, gen_args);

    CLI::App* tr = app.add_subcommand("train", "train the velocity field");
    add_common(tr, train_args);
    tr->add_option("--world", train_world, "world file (generated from config when absent)");
    tr->add_option("--resume", train_resume, "checkpoint to resume from");

    CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on one task");
    add_common(ev, eval_args);
    ev->add_option("--world", eval_world, "world file");
    ev->add_option("--checkpoint", eval_checkpoint, "checkpoint file");
    ev->add_flag("--oracle", eval_oracle, "evaluate the exact straight-path field instead");

    CLI::App* ab = app.add_subcommand("ablate", "run a comparison suite");
    add_common(ab, ablate_args);
    ab->add_option("--world", ablate_world, "world file (suite default when absent)");

    CLI::App* an = app.add_subcommand("analyze", "similarity, variance and PCA trajectories");
    add_common(an, analyze_args);
    an->add_option("--world", analyze_world, "world file");
    an->add_option("--checkpoint", analyze_checkpoints, "checkpoint file(s)");
    an->add_flag("--oracle", analyze_oracle, "include the exact straight-path field");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            vb::cmd_gen_world(build_config(gen_args));
        } else if (tr->parsed()) {
            vb::cmd_train(build_config(train_args), train_world, train_resume);
        } else if (ev->parsed()) {
            vb::cmd_eval(build_config(eval_args), eval_checkpoint, eval_world, eval_oracle);
        } else if (ab->parsed()) {
            vb::cmd_ablate(build_config(ablate_args), ablate_world);
        } else if (an->parsed()) {
            vb::cmd_analyze(build_config(analyze_args), analyze_checkpoints, analyze_world,
                            analyze_oracle);
        }
    } catch (const vb::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const vb::ContractError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const vb::NumericError& e) {
        std::fprintf(stderr, "numeric abort: %s\n", e.what());
        return 3;
    } catch (const vb::IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
