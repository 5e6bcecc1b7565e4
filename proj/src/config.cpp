#include "visbridge/config.hpp"

#include <cstdio>
#include <sstream>

#include "visbridge/common.hpp"

namespace vb {

namespace {

int64_t parse_int(const std::string& key, const std::string& value) {
    size_t used = 0;
    int64_t v;
    try {
        v = std::stoll(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: " + value);
    }
    if (used != value.size())
        throw ConfigError("config key " + key + ": not an integer: " + value);
    return v;
}

double parse_double(const std::string& key, const std::string& value) {
    size_t used = 0;
    double v;
    try {
        v = std::stod(value, &used);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: " + value);
    }
    if (used != value.size())
        throw ConfigError("config key " + key + ": not a number: " + value);
    return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw ConfigError("config key " + key + ": not a bool (true/false): " + value);
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(part);
    }
    return out;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
    if (key == "world_seed") rc.world_seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "input_dim") rc.input_dim = static_cast<int>(parse_int(key, value));
    else if (key == "grid_side") rc.grid_side = static_cast<int>(parse_int(key, value));
    else if (key == "channels") rc.channels = static_cast<int>(parse_int(key, value));
    else if (key == "n_train") rc.n_train = static_cast<int>(parse_int(key, value));
    else if (key == "n_val") rc.n_val = static_cast<int>(parse_int(key, value));
    else if (key == "n_classes") rc.n_classes = static_cast<int>(parse_int(key, value));
    else if (key == "task_embed_dim") rc.task_embed_dim = static_cast<int>(parse_int(key, value));
    else if (key == "tasks") {
        rc.tasks = split_list(value);
        if (rc.tasks.empty()) throw ConfigError("config key tasks: empty task list");
        for (const auto& t : rc.tasks) task_preset(t);  // validate names now
    } else if (key == "k_steps") rc.k_steps = static_cast<int>(parse_int(key, value));
    else if (key == "steps") rc.steps = static_cast<int>(parse_int(key, value));
    else if (key == "epochs") rc.epochs = static_cast<int>(parse_int(key, value));
    else if (key == "batch_size") rc.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "lr") rc.lr = parse_double(key, value);
    else if (key == "weight_decay") rc.weight_decay = parse_double(key, value);
    else if (key == "seed") rc.seed = static_cast<uint64_t>(parse_int(key, value));
    else if (key == "k_inclusive") rc.k_inclusive = parse_bool(key, value);
    else if (key == "n_blocks") rc.n_blocks = static_cast<int>(parse_int(key, value));
    else if (key == "d_model") rc.d_model = static_cast<int>(parse_int(key, value));
    else if (key == "n_heads") rc.n_heads = static_cast<int>(parse_int(key, value));
    else if (key == "mlp_ratio") rc.mlp_ratio = static_cast<int>(parse_int(key, value));
    else if (key == "mixing") {
        if (value != "attention" && value != "mlp_mixer")
            throw ConfigError("config key mixing: expected attention|mlp_mixer, got " + value);
        rc.mixing = value;
    } else if (key == "positional") rc.positional = parse_bool(key, value);
    else if (key == "per_task_training") rc.per_task_training = parse_bool(key, value);
    else if (key == "pooled_similarity") rc.pooled_similarity = parse_bool(key, value);
    else if (key == "noise_anchor") rc.noise_anchor = parse_bool(key, value);
    else if (key == "embed_variant") {
        if (value != "circular" && value != "random" && value != "constant")
            throw ConfigError("config key embed_variant: expected circular|random|constant, got " +
                              value);
        rc.embed_variant = value;
    } else if (key == "task") rc.task = static_cast<int>(parse_int(key, value));
    else if (key == "mode") {
        if (value != "zero_shot" && value != "fine_tuned")
            throw ConfigError("config key mode: expected zero_shot|fine_tuned, got " + value);
        rc.mode = value;
    } else if (key == "decoder_epochs") rc.decoder_epochs = static_cast<int>(parse_int(key, value));
    else if (key == "eval_batch") rc.eval_batch = static_cast<int>(parse_int(key, value));
    else if (key == "suite") rc.suite = value;
    else if (key == "out") rc.out = value;
    else throw ConfigError("unknown config key: " + key);
}

RunConfig parse_config_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot read config file " + path);
    std::string text;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);

    RunConfig rc;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        apply_kv(rc, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return rc;
}

std::string config_echo(const RunConfig& rc) {
    std::string s;
    auto put = [&s](const char* k, const std::string& v) {
        s += k;
        s += '=';
        s += v;
        s += '\n';
    };
    put("world_seed", std::to_string(rc.world_seed));
    put("input_dim", std::to_string(rc.input_dim));
    put("grid_side", std::to_string(rc.grid_side));
    put("channels", std::to_string(rc.channels));
    put("n_train", std::to_string(rc.n_train));
    put("n_val", std::to_string(rc.n_val));
    put("n_classes", std::to_string(rc.n_classes));
    put("task_embed_dim", std::to_string(rc.task_embed_dim));
    std::string tl;
    for (size_t i = 0; i < rc.tasks.size(); ++i) {
        if (i) tl += ',';
        tl += rc.tasks[i];
    }
    put("tasks", tl);
    put("k_steps", std::to_string(rc.k_steps));
    put("steps", std::to_string(rc.steps));
    put("epochs", std::to_string(rc.epochs));
    put("batch_size", std::to_string(rc.batch_size));
    put("lr", format_number(rc.lr));
    put("weight_decay", format_number(rc.weight_decay));
    put("seed", std::to_string(rc.seed));
    put("k_inclusive", rc.k_inclusive ? "true" : "false");
    put("n_blocks", std::to_string(rc.n_blocks));
    put("d_model", std::to_string(rc.d_model));
    put("n_heads", std::to_string(rc.n_heads));
    put("mlp_ratio", std::to_string(rc.mlp_ratio));
    put("mixing", rc.mixing);
    put("positional", rc.positional ? "true" : "false");
    put("per_task_training", rc.per_task_training ? "true" : "false");
    put("pooled_similarity", rc.pooled_similarity ? "true" : "false");
    put("noise_anchor", rc.noise_anchor ? "true" : "false");
    put("embed_variant", rc.embed_variant);
    put("task", std::to_string(rc.task));
    put("mode", rc.mode);
    put("decoder_epochs", std::to_string(rc.decoder_epochs));
    put("eval_batch", std::to_string(rc.eval_batch));
    put("suite", rc.suite);
    put("out", rc.out);
    return s;
}

TaskInstance task_preset(const std::string& name) {
    TaskInstance t;
    t.name = name;
    if (name == "classify_affine") {
        t.encoder_kind = EncoderKind::affine;
        t.eval_protocol = EvalProtocol::probe_accuracy;
    } else if (name == "classify_orthogonal") {
        t.encoder_kind = EncoderKind::orthogonal;
        t.eval_protocol = EvalProtocol::probe_accuracy;
    } else if (name == "classify_mlp" || name == "classify_mlp_base") {
        t.encoder_kind = EncoderKind::mlp_nonlinear;
        t.eval_protocol = EvalProtocol::probe_accuracy;
        t.teacher_hidden = 128;
        t.teacher_depth = 2;
    } else if (name == "classify_mlp_small") {
        t.encoder_kind = EncoderKind::mlp_nonlinear;
        t.eval_protocol = EvalProtocol::probe_accuracy;
        t.teacher_hidden = 32;
        t.teacher_depth = 1;
    } else if (name == "classify_mlp_huge") {
        t.encoder_kind = EncoderKind::mlp_nonlinear;
        t.eval_protocol = EvalProtocol::probe_accuracy;
        t.teacher_hidden = 256;
        t.teacher_depth = 3;
    } else if (name == "dense_pyramid") {
        t.encoder_kind = EncoderKind::multiscale_pyramid;
        t.eval_protocol = EvalProtocol::per_token_mse;
        t.level_factors = {1, 2};
    } else if (name == "retrieve_pair") {
        t.encoder_kind = EncoderKind::affine;
        t.eval_protocol = EvalProtocol::recall_at_k;
    } else if (name == "opposing") {
        t.encoder_kind = EncoderKind::affine;
        t.eval_protocol = EvalProtocol::probe_accuracy;
        t.opposes = 0;  // placeholder, resolved during world_config expansion
    } else {
        throw ConfigError("unknown task preset: " + name);
    }
    return t;
}

WorldConfig world_config(const RunConfig& rc) {
    WorldConfig wc;
    wc.seed = rc.world_seed;
    wc.input_dim = rc.input_dim;
    wc.grid_side = rc.grid_side;
    wc.channels = rc.channels;
    wc.n_train = rc.n_train;
    wc.n_val = rc.n_val;
    wc.n_classes = rc.n_classes;
    wc.task_embed_dim = rc.task_embed_dim;
    for (const std::string& name : rc.tasks) {
        TaskInstance t = task_preset(name);
        if (name == "opposing") {
            // Bind to the nearest earlier affine-family task.
            int found = -1;
            for (int j = static_cast<int>(wc.tasks.size()) - 1; j >= 0; --j) {
                const EncoderKind k = wc.tasks[static_cast<size_t>(j)].encoder_kind;
                if ((k == EncoderKind::affine || k == EncoderKind::multiscale_pyramid) &&
                    wc.tasks[static_cast<size_t>(j)].opposes < 0) {
                    found = j;
                    break;
                }
            }
            if (found < 0)
                throw ConfigError("task preset opposing: no earlier affine task to oppose");
            t.opposes = found;
        }
        wc.tasks.push_back(std::move(t));
    }
    return wc;
}

FlowConfig flow_config(const RunConfig& rc) {
    FlowConfig fc;
    fc.K = rc.k_steps;
    fc.N = rc.steps;
    fc.epochs = rc.epochs;
    fc.lr = rc.lr;
    fc.weight_decay = rc.weight_decay;
    fc.batch_size = rc.batch_size;
    fc.seed = rc.seed;
    fc.k_inclusive = rc.k_inclusive;
    return fc;
}

ArchDescriptor arch_config(const RunConfig& rc, const WorldConfig& wc) {
    ArchDescriptor a;
    a.n_blocks = rc.n_blocks;
    a.d_model = rc.d_model;
    a.mixing = rc.mixing == "mlp_mixer" ? Mixing::mlp_mixer : Mixing::attention;
    a.n_heads = rc.n_heads;
    a.channels = wc.channels;
    a.task_embed_dim = wc.task_embed_dim;
    a.num_tasks = static_cast<int>(wc.tasks.size());
    a.mlp_ratio = rc.mlp_ratio;
    a.n_tokens = wc.grid_side * wc.grid_side;
    a.positional = rc.positional;
    a.cond_extra = rc.noise_anchor ? wc.channels : 0;
    int levels = 1;
    for (const auto& t : wc.tasks)
        levels = std::max(levels, static_cast<int>(t.level_factors.size()));
    a.num_levels = levels;
    if (rc.embed_variant == "random") a.task_embed = TaskEmbedVariant::random_frozen;
    else if (rc.embed_variant == "constant") a.task_embed = TaskEmbedVariant::constant;
    else a.task_embed = TaskEmbedVariant::circular;
    return a;
}

}  // namespace vb
