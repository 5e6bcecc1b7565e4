#include "visbridge/runner.hpp"

#include <cstdio>
#include <filesystem>

#include "visbridge/analytics.hpp"
#include "visbridge/checkpoint.hpp"
#include "visbridge/common.hpp"
#include "visbridge/ops.hpp"

namespace vb {

using diff::Tensor;

namespace {

const char* mixing_name(Mixing m) { return m == Mixing::attention ? "attention" : "mlp_mixer"; }

Mixing mixing_from(const std::string& s) {
    if (s == "attention") return Mixing::attention;
    if (s == "mlp_mixer") return Mixing::mlp_mixer;
    throw IoError("checkpoint has unknown mixing kind: " + s);
}

const char* variant_name(TaskEmbedVariant v) {
    switch (v) {
        case TaskEmbedVariant::circular: return "circular";
        case TaskEmbedVariant::random_frozen: return "random";
        case TaskEmbedVariant::constant: return "constant";
    }
    return "?";
}

TaskEmbedVariant variant_from(const std::string& s) {
    if (s == "circular") return TaskEmbedVariant::circular;
    if (s == "random") return TaskEmbedVariant::random_frozen;
    if (s == "constant") return TaskEmbedVariant::constant;
    throw IoError("checkpoint has unknown task embed variant: " + s);
}

int64_t meta_int(const std::string& meta, const std::string& key, const std::string& path) {
    const std::string v = metadata_value(meta, key);
    if (v.empty()) throw IoError("checkpoint missing key " + key + ": " + path);
    try {
        return std::stoll(v);
    } catch (const std::exception&) {
        throw IoError("checkpoint has malformed " + key + ": " + path);
    }
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir);
}

void write_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    const size_t n = std::fwrite(text.data(), 1, text.size(), f);
    const bool short_write = n != text.size();
    if (std::fclose(f) != 0 || short_write) throw IoError("cannot write " + path);
}

void append_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw IoError("cannot write " + path);
    const size_t n = std::fwrite(text.data(), 1, text.size(), f);
    const bool short_write = n != text.size();
    if (std::fclose(f) != 0 || short_write) throw IoError("cannot write " + path);
}

constexpr const char* kMetricsHeader = "epoch,task_id,split,loss,metric_name,metric_value\n";

std::string metrics_rows(const std::vector<EpochStats>& hist) {
    std::string s;
    for (const auto& st : hist) {
        s += std::to_string(st.epoch) + "," + std::to_string(st.task_id) + ",train," +
             format_number(st.mean_loss) + ",loss," + format_number(st.mean_loss) + "\n";
    }
    return s;
}

SyntheticWorld world_for(const RunConfig& rc, const std::string& world_path) {
    if (!world_path.empty() && std::filesystem::exists(world_path)) return load_world(world_path);
    if (!world_path.empty()) throw IoError("world file not found: " + world_path);
    return generate_world(world_config(rc));
}

std::string file_stem(const std::string& path) {
    return std::filesystem::path(path).stem().string();
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    const ArchDescriptor& a = ck.params.arch;
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("kind", "checkpoint");
    kv.emplace_back("epoch", std::to_string(ck.epoch));
    kv.emplace_back("seed", std::to_string(ck.seed));
    kv.emplace_back("objective", ck.objective);
    kv.emplace_back("opt_step", std::to_string(ck.ostate.step));
    kv.emplace_back("arch_n_blocks", std::to_string(a.n_blocks));
    kv.emplace_back("arch_d_model", std::to_string(a.d_model));
    kv.emplace_back("arch_mixing", mixing_name(a.mixing));
    kv.emplace_back("arch_n_heads", std::to_string(a.n_heads));
    kv.emplace_back("arch_channels", std::to_string(a.channels));
    kv.emplace_back("arch_task_embed_dim", std::to_string(a.task_embed_dim));
    kv.emplace_back("arch_cond_dim", std::to_string(a.cond_dim));
    kv.emplace_back("arch_num_levels", std::to_string(a.num_levels));
    kv.emplace_back("arch_num_tasks", std::to_string(a.num_tasks));
    kv.emplace_back("arch_mlp_ratio", std::to_string(a.mlp_ratio));
    kv.emplace_back("arch_n_tokens", std::to_string(a.n_tokens));
    kv.emplace_back("arch_cond_extra", std::to_string(a.cond_extra));
    kv.emplace_back("arch_positional", a.positional ? "true" : "false");
    kv.emplace_back("arch_task_embed", variant_name(a.task_embed));

    Container c;
    c.metadata = encode_metadata(kv);
    for (const auto& [name, t] : ck.params.tensors) c.tensors.emplace_back("param." + name, t);
    for (const auto& [name, m] : ck.ostate.m) {
        // Read the length before std::move; argument evaluation order
        // would otherwise be free to empty the vector first.
        std::vector<double> mv = m;
        const int n = static_cast<int>(mv.size());
        c.tensors.emplace_back("opt.m." + name, Tensor::from({n}, std::move(mv)));
    }
    for (const auto& [name, v] : ck.ostate.v) {
        std::vector<double> vv = v;
        const int n = static_cast<int>(vv.size());
        c.tensors.emplace_back("opt.v." + name, Tensor::from({n}, std::move(vv)));
    }
    save_container(path, c);
}

Checkpoint load_checkpoint(const std::string& path) {
    Container c = load_container(path);
    if (metadata_value(c.metadata, "kind") != "checkpoint")
        throw IoError("not a checkpoint file: " + path);
    Checkpoint ck;
    ck.epoch = static_cast<int>(meta_int(c.metadata, "epoch", path));
    ck.seed = static_cast<uint64_t>(meta_int(c.metadata, "seed", path));
    ck.objective = metadata_value(c.metadata, "objective");
    ck.ostate.step = meta_int(c.metadata, "opt_step", path);
    ArchDescriptor& a = ck.params.arch;
    a.n_blocks = static_cast<int>(meta_int(c.metadata, "arch_n_blocks", path));
    a.d_model = static_cast<int>(meta_int(c.metadata, "arch_d_model", path));
    a.mixing = mixing_from(metadata_value(c.metadata, "arch_mixing"));
    a.n_heads = static_cast<int>(meta_int(c.metadata, "arch_n_heads", path));
    a.channels = static_cast<int>(meta_int(c.metadata, "arch_channels", path));
    a.task_embed_dim = static_cast<int>(meta_int(c.metadata, "arch_task_embed_dim", path));
    a.cond_dim = static_cast<int>(meta_int(c.metadata, "arch_cond_dim", path));
    a.num_levels = static_cast<int>(meta_int(c.metadata, "arch_num_levels", path));
    a.num_tasks = static_cast<int>(meta_int(c.metadata, "arch_num_tasks", path));
    a.mlp_ratio = static_cast<int>(meta_int(c.metadata, "arch_mlp_ratio", path));
    a.n_tokens = static_cast<int>(meta_int(c.metadata, "arch_n_tokens", path));
    a.cond_extra = static_cast<int>(meta_int(c.metadata, "arch_cond_extra", path));
    a.positional = metadata_value(c.metadata, "arch_positional") == "true";
    a.task_embed = variant_from(metadata_value(c.metadata, "arch_task_embed"));

    for (const auto& [name, t] : c.tensors) {
        if (name.rfind("param.", 0) == 0) {
            // Loaded tensors are plain data; re-mark them as learnable or
            // a resumed run records no gradients.
            ck.params.tensors.emplace(name.substr(6), t).first->second.set_requires_grad(true);
        } else if (name.rfind("opt.m.", 0) == 0) {
            ck.ostate.m.emplace(name.substr(6), t.data());
        } else if (name.rfind("opt.v.", 0) == 0) {
            ck.ostate.v.emplace(name.substr(6), t.data());
        }
    }
    return ck;
}

void cmd_gen_world(const RunConfig& rc) {
    ensure_dir(rc.out);
    SyntheticWorld w = generate_world(world_config(rc));
    save_world(rc.out + "/world.vbrg", w);
    write_file(rc.out + "/config.txt", config_echo(rc));
    std::printf("world: %d train / %d val samples, %zu tasks -> %s/world.vbrg\n", w.cfg.n_train,
                w.cfg.n_val, w.tasks.size(), rc.out.c_str());
}

void cmd_train(const RunConfig& rc, const std::string& world_path,
               const std::string& resume_path) {
    ensure_dir(rc.out);
    if (rc.per_task_training && !resume_path.empty())
        throw ConfigError("per_task_training cannot resume from a single checkpoint");
    SyntheticWorld w = world_for(rc, world_path);
    const ArchDescriptor arch = arch_config(rc, w.cfg);
    const FlowConfig fc = flow_config(rc);
    fc.validate();
    const AnchorMode anchor = rc.noise_anchor ? AnchorMode::noise : AnchorMode::tokens;

    write_file(rc.out + "/config.txt", config_echo(rc));
    if (world_path.empty()) save_world(rc.out + "/world.vbrg", w);

    const std::string metrics_path = rc.out + "/metrics.csv";

    auto train_one = [&](const std::vector<TaskData>& tds, const std::string& ck_path) {
        Checkpoint ck;
        int start_epoch = 0;
        if (!resume_path.empty()) {
            ck = load_checkpoint(resume_path);
            if (!(ck.params.arch.n_blocks == arch.n_blocks && ck.params.arch.d_model == arch.d_model &&
                  ck.params.arch.mixing == arch.mixing && ck.params.arch.n_heads == arch.n_heads &&
                  ck.params.arch.channels == arch.channels &&
                  ck.params.arch.task_embed_dim == arch.task_embed_dim &&
                  ck.params.arch.cond_dim == arch.cond_dim &&
                  ck.params.arch.num_levels == arch.num_levels &&
                  ck.params.arch.num_tasks == arch.num_tasks &&
                  ck.params.arch.mlp_ratio == arch.mlp_ratio &&
                  ck.params.arch.n_tokens == arch.n_tokens &&
                  ck.params.arch.cond_extra == arch.cond_extra &&
                  ck.params.arch.positional == arch.positional &&
                  ck.params.arch.task_embed == arch.task_embed))
                throw ConfigError("resume checkpoint architecture differs from config");
            start_epoch = ck.epoch;
            if (start_epoch > fc.epochs)
                throw ConfigError("resume checkpoint is past the requested epoch count");
        } else {
            ck.params = init_params(arch, fc.seed);
        }
        ck.seed = fc.seed;
        ck.objective = "velocity";

        std::vector<EpochStats> hist =
            train(ck.params, tds, fc, ck.ostate, TrainObjective::velocity, start_epoch);

        if (!resume_path.empty() && std::filesystem::exists(metrics_path)) {
            append_file(metrics_path, metrics_rows(hist));
        } else {
            write_file(metrics_path, std::string(kMetricsHeader) + metrics_rows(hist));
        }
        ck.epoch = fc.epochs;
        save_checkpoint(ck_path, ck);
        for (const auto& st : hist)
            std::printf("epoch %d task %d loss %s\n", st.epoch, st.task_id,
                        format_number(st.mean_loss).c_str());
        std::printf("checkpoint -> %s\n", ck_path.c_str());
    };

    if (rc.per_task_training) {
        for (int t = 0; t < static_cast<int>(w.tasks.size()); ++t) {
            std::vector<TaskData> tds = {materialize(w, t, true, anchor)};
            train_one(tds, rc.out + "/checkpoint_task" + std::to_string(t) + ".vbrg");
        }
    } else {
        std::vector<TaskData> tds;
        for (int t = 0; t < static_cast<int>(w.tasks.size()); ++t)
            tds.push_back(materialize(w, t, true, anchor));
        train_one(tds, rc.out + "/checkpoint.vbrg");
    }
}

void cmd_eval(const RunConfig& rc, const std::string& checkpoint_path,
              const std::string& world_path, bool oracle) {
    ensure_dir(rc.out);
    SyntheticWorld w = world_for(rc, world_path);
    if (rc.task < 0 || rc.task >= static_cast<int>(w.tasks.size()))
        throw ConfigError("eval: task index out of range: " + std::to_string(rc.task));

    Checkpoint ck;
    EvalModel model;
    int epoch = 0;
    if (oracle) {
        model.kind = EvalModel::Kind::oracle;
    } else {
        if (checkpoint_path.empty()) throw ConfigError("eval: need a checkpoint or --oracle");
        ck = load_checkpoint(checkpoint_path);
        if (ck.params.arch.channels != w.cfg.channels ||
            ck.params.arch.num_tasks != static_cast<int>(w.tasks.size()) ||
            ck.params.arch.task_embed_dim != w.cfg.task_embed_dim)
            throw ConfigError("eval: checkpoint architecture does not fit this world");
        model.kind =
            ck.objective == "direct" ? EvalModel::Kind::direct : EvalModel::Kind::flow;
        model.params = &ck.params;
        epoch = ck.epoch;
    }

    MetricsRecord rec = rc.mode == "fine_tuned"
                            ? eval_fine_tuned(model, w, rc.task, rc.steps, rc.decoder_epochs,
                                              rc.eval_batch)
                            : eval_zero_shot(model, w, rc.task, rc.steps, rc.eval_batch);

    const std::string metrics_path = rc.out + "/metrics.csv";
    std::string rows;
    for (const auto& m : rec.metrics) {
        rows += std::to_string(epoch) + "," + std::to_string(rec.task_id) + ",val,," + m.name +
                "_n" + std::to_string(rc.steps) + "," + format_number(m.value) + "\n";
        std::printf("task %d (%s) N=%d %s = %s\n", rec.task_id, rec.task_name.c_str(), rc.steps,
                    m.name.c_str(), format_number(m.value).c_str());
    }
    if (!std::filesystem::exists(metrics_path)) append_file(metrics_path, kMetricsHeader);
    append_file(metrics_path, rows);
}

namespace {

// Worlds used by ablation suites that need a specific task mix; the
// configured dims and seeds are kept, the task list is pinned.
SyntheticWorld suite_world(const RunConfig& rc, const std::vector<std::string>& tasks) {
    RunConfig sub = rc;
    sub.tasks = tasks;
    return generate_world(world_config(sub));
}

VelocityParams train_flow_model(const SyntheticWorld& w, const ArchDescriptor& arch,
                                const FlowConfig& fc, AnchorMode anchor = AnchorMode::tokens) {
    VelocityParams params = init_params(arch, fc.seed);
    opt::AdamWState ostate;
    std::vector<TaskData> tds;
    for (int t = 0; t < static_cast<int>(w.tasks.size()); ++t)
        tds.push_back(materialize(w, t, true, anchor));
    train(params, tds, fc, ostate);
    return params;
}

}  // namespace

void cmd_ablate(const RunConfig& rc, const std::string& world_path) {
    ensure_dir(rc.out);
    const FlowConfig fc = flow_config(rc);
    fc.validate();
    write_file(rc.out + "/config.txt", config_echo(rc));
    const std::string csv_path = rc.out + "/" + rc.suite + ".csv";

    if (rc.suite == "flow_steps") {
        SyntheticWorld w =
            world_path.empty() ? suite_world(rc, {"classify_mlp"}) : load_world(world_path);
        VelocityParams params = train_flow_model(w, arch_config(rc, w.cfg), fc);
        EvalModel model;
        model.params = &params;
        std::string csv = "variant,steps,accuracy\n";
        for (int n : {1, 2, 10}) {
            MetricsRecord rec = eval_zero_shot(model, w, 0, n, rc.eval_batch);
            csv += "n" + std::to_string(n) + "," + std::to_string(n) + "," +
                   format_number(rec.metric("accuracy")) + "\n";
        }
        write_file(csv_path, csv);
    } else if (rc.suite == "capacity") {
        const std::pair<const char*, const char*> scales[] = {
            {"small", "classify_mlp_small"},
            {"base", "classify_mlp_base"},
            {"huge", "classify_mlp_huge"},
        };
        std::string csv = "variant,teacher_hidden,teacher_depth,accuracy\n";
        for (const auto& [label, preset] : scales) {
            SyntheticWorld w = suite_world(rc, {preset});
            VelocityParams params = train_flow_model(w, arch_config(rc, w.cfg), fc);
            EvalModel model;
            model.params = &params;
            MetricsRecord rec = eval_zero_shot(model, w, 0, rc.steps, rc.eval_batch);
            csv += std::string(label) + "," + std::to_string(w.tasks[0].inst.teacher_hidden) +
                   "," + std::to_string(w.tasks[0].inst.teacher_depth) + "," +
                   format_number(rec.metric("accuracy")) + "\n";
        }
        write_file(csv_path, csv);
    } else if (rc.suite == "osd") {
        SyntheticWorld w =
            world_path.empty() ? suite_world(rc, {"classify_affine"}) : load_world(world_path);
        const ArchDescriptor arch = arch_config(rc, w.cfg);
        VelocityParams params = train_flow_model(w, arch, fc);
        EvalModel model;
        model.params = &params;
        MetricsRecord flow_rec = eval_zero_shot(model, w, 0, rc.steps, rc.eval_batch);
        MetricsRecord osd_rec = osd_baseline(w, 0, arch, fc);
        std::string csv = "variant,accuracy\n";
        csv += "flow," + format_number(flow_rec.metric("accuracy")) + "\n";
        csv += "osd," + format_number(osd_rec.metric("accuracy")) + "\n";
        write_file(csv_path, csv);
    } else if (rc.suite == "noise_anchor") {
        SyntheticWorld w =
            world_path.empty() ? suite_world(rc, {"classify_affine"}) : load_world(world_path);
        const ArchDescriptor arch = arch_config(rc, w.cfg);
        VelocityParams params = train_flow_model(w, arch, fc);
        EvalModel model;
        model.params = &params;
        MetricsRecord tok_rec = eval_zero_shot(model, w, 0, rc.steps, rc.eval_batch);
        MetricsRecord noise_rec = noise_anchor_baseline(w, 0, arch, fc);
        std::string csv = "variant,accuracy\n";
        csv += "tokens," + format_number(tok_rec.metric("accuracy")) + "\n";
        csv += "noise," + format_number(noise_rec.metric("accuracy")) + "\n";
        write_file(csv_path, csv);
    } else if (rc.suite == "task_embed") {
        SyntheticWorld w = world_path.empty()
                               ? suite_world(rc, {"classify_affine", "opposing"})
                               : load_world(world_path);
        std::vector<AblationRow> rows = task_embed_ablation(w, arch_config(rc, w.cfg), fc);
        std::string csv = "variant";
        for (const auto& m : rows[0].metrics) csv += "," + m.name;
        csv += "\n";
        for (const auto& row : rows) {
            csv += row.variant;
            for (const auto& m : row.metrics) csv += "," + format_number(m.value);
            csv += "\n";
        }
        write_file(csv_path, csv);
    } else {
        throw ConfigError("unknown ablation suite: " + rc.suite +
                          " (valid: flow_steps, capacity, osd, noise_anchor, task_embed)");
    }
    std::printf("suite %s -> %s\n", rc.suite.c_str(), csv_path.c_str());
}

void cmd_analyze(const RunConfig& rc, const std::vector<std::string>& checkpoint_paths,
                 const std::string& world_path, bool oracle) {
    ensure_dir(rc.out);
    SyntheticWorld w = world_for(rc, world_path);
    if (rc.task < 0 || rc.task >= static_cast<int>(w.tasks.size()))
        throw ConfigError("analyze: task index out of range: " + std::to_string(rc.task));
    if (checkpoint_paths.empty() && !oracle)
        throw ConfigError("analyze: need at least one checkpoint or --oracle");

    struct NamedModel {
        std::string name;
        Checkpoint ck;  // unused for oracle
        EvalModel model;
    };
    std::vector<NamedModel> models;
    models.reserve(checkpoint_paths.size() + 1);
    if (oracle) {
        NamedModel nm;
        nm.name = "oracle";
        nm.model.kind = EvalModel::Kind::oracle;
        models.push_back(std::move(nm));
    }
    for (const auto& path : checkpoint_paths) {
        NamedModel nm;
        nm.name = file_stem(path);
        nm.ck = load_checkpoint(path);
        nm.model.kind =
            nm.ck.objective == "direct" ? EvalModel::Kind::direct : EvalModel::Kind::flow;
        models.push_back(std::move(nm));
    }
    // params pointers must bind after the vector stops reallocating
    for (auto& nm : models)
        if (nm.model.kind != EvalModel::Kind::oracle) nm.model.params = &nm.ck.params;

    std::vector<VariantAnalytics> rows;
    std::vector<std::pair<std::string, PcaTrajectory>> trajectories;
    const bool single = models.size() == 1;
    for (auto& nm : models) {
        const AnchorMode anchor = nm.model.kind != EvalModel::Kind::oracle &&
                                          nm.model.params->arch.cond_extra > 0
                                      ? AnchorMode::noise
                                      : AnchorMode::tokens;
        TaskData td = materialize(w, rc.task, false, anchor);

        // analytics look at the finest level over the whole val split
        MultiScaleTokens anchors;
        RepBatch a0;
        a0.data = td.source_levels[0];
        a0.level = 0;
        a0.grid_side = td.grid_sides[0];
        anchors.per_level.push_back(a0);
        RepBatch target;
        target.data = td.target_levels[0];
        target.level = 0;
        target.grid_side = td.grid_sides[0];

        TrajectoryDump dump;
        dump.seed = rc.seed;
        MultiScaleTokens out;
        switch (nm.model.kind) {
            case EvalModel::Kind::oracle: {
                Tensor field = true_velocity(a0, target).data;
                out = euler_integrate_fn([&](const Tensor&, double, int) { return field; },
                                         anchors, rc.steps, &dump);
                break;
            }
            case EvalModel::Kind::direct: {
                // one forward pass; dump holds start and end states
                Tensor pred = predict_velocity(*nm.model.params, a0.data, 0.0, 0, td.spec,
                                               td.cond_extra_all.defined() ? &td.cond_extra_all
                                                                           : nullptr);
                Tensor zero = Tensor::zeros(pred.shape());
                MultiScaleTokens pa;
                RepBatch pr = a0;
                pr.data = pred;
                pa.per_level.push_back(pr);
                out = euler_integrate_fn(
                    [&](const Tensor&, double, int) { return zero; }, pa, rc.steps, &dump);
                // replace the first snapshot so the trajectory starts at the anchor
                Tensor flat_anchor = diff::reshape(
                    a0.data, {a0.data.shape()[0], a0.data.shape()[1] * a0.data.shape()[2]});
                dump.snapshots[0] = flat_anchor;
                break;
            }
            case EvalModel::Kind::flow: {
                out = euler_integrate(*nm.model.params, anchors, td.spec, rc.steps,
                                      td.cond_extra_all.defined() ? &td.cond_extra_all : nullptr,
                                      &dump);
                break;
            }
        }
        dump.task_id = rc.task;

        SimilarityResult sim = latent_similarity(out.per_level[0], target, rc.pooled_similarity);
        VariantAnalytics va;
        va.variant = nm.name;
        va.cosine_sim = sim.mean;
        va.mean_std = latent_variance(out.per_level[0]);
        rows.push_back(va);
        if (sim.excluded > 0)
            std::printf("warning: %d zero-norm samples excluded from similarity (%s)\n",
                        sim.excluded, nm.name.c_str());

        trajectories.emplace_back(single ? "trajectory" : "trajectory_" + nm.name,
                                  pca_trajectory(dump, target));
        std::printf("%s: cosine_sim %s, mean_std %s\n", nm.name.c_str(),
                    format_number(va.cosine_sim).c_str(), format_number(va.mean_std).c_str());
    }
    emit_plots(rows, trajectories, rc.out);
    std::printf("analytics -> %s\n", rc.out.c_str());
}

}  // namespace vb
