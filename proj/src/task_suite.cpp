#include "visbridge/task_suite.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "visbridge/checkpoint.hpp"
#include "visbridge/common.hpp"
#include "visbridge/ops.hpp"

namespace vb {

using diff::Tensor;

void WorldConfig::validate() const {
    if (input_dim < 1 || grid_side < 1 || channels < 1)
        throw ContractError("WorldConfig: dims must be positive");
    if (n_train < 1 || n_val < 1) throw ContractError("WorldConfig: split sizes must be positive");
    if (n_classes < 2) throw ContractError("WorldConfig: need at least two classes");
    if (tasks.empty()) throw ContractError("WorldConfig: at least one task");
    if (task_embed_dim < 2 || task_embed_dim % 2 != 0)
        throw ContractError("WorldConfig: task_embed_dim must be even and >= 2");
}

namespace {

DecoderKind decoder_kind_of(EvalProtocol p) {
    switch (p) {
        case EvalProtocol::probe_accuracy: return DecoderKind::classify;
        case EvalProtocol::per_token_mse: return DecoderKind::dense_regress;
        case EvalProtocol::recall_at_k: return DecoderKind::retrieve;
    }
    throw ContractError("unknown eval protocol");
}

// Affine map of rows plus reshape to token grids: x [n, in] -> [n, P, D].
Tensor tokens_of(const Tensor& x, const Tensor& w, const Tensor& b, int P, int D) {
    return diff::reshape(diff::affine(x, w, b), {x.shape()[0], P, D});
}

// Modified Gram-Schmidt on a random Gaussian matrix; rows of the
// result are orthonormal.
Tensor orthogonal_matrix(Rng& rng, int d) {
    std::vector<double> a(static_cast<size_t>(d) * d);
    for (double& v : a) v = rng.normal();
    for (int i = 0; i < d; ++i) {
        double* vi = a.data() + static_cast<size_t>(i) * d;
        for (int j = 0; j < i; ++j) {
            const double* vj = a.data() + static_cast<size_t>(j) * d;
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += vi[c] * vj[c];
            for (int c = 0; c < d; ++c) vi[c] -= dot * vj[c];
        }
        double norm = 0.0;
        for (int c = 0; c < d; ++c) norm += vi[c] * vi[c];
        norm = std::sqrt(norm);
        if (norm < 1e-8) throw NumericError("orthogonal_matrix: degenerate draw");
        for (int c = 0; c < d; ++c) vi[c] /= norm;
    }
    return Tensor::from({d, d}, std::move(a));
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const int n = logits.shape()[0];
    const int c = logits.shape()[1];
    std::vector<int> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = logits.data().data() + static_cast<size_t>(i) * c;
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (row[j] > row[best]) best = j;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

const TaskArtifacts& task_at(const SyntheticWorld& w, int task) {
    if (task < 0 || task >= static_cast<int>(w.tasks.size()))
        throw ContractError("task index not registered in this world");
    return w.tasks[static_cast<size_t>(task)];
}

}  // namespace

SyntheticWorld generate_world(const WorldConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    SyntheticWorld w;
    w.cfg = cfg;
    const int P = cfg.grid_side * cfg.grid_side;
    const int D = cfg.channels;
    const double in_std = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));

    w.train_x = Tensor::randn({cfg.n_train, cfg.input_dim}, rng, 1.0);
    w.val_x = Tensor::randn({cfg.n_val, cfg.input_dim}, rng, 1.0);
    w.src_w = Tensor::randn({cfg.input_dim, P * D}, rng, in_std);
    w.src_b = Tensor::randn({P * D}, rng, 0.1);

    const int T = static_cast<int>(cfg.tasks.size());
    for (int i = 0; i < T; ++i) {
        const TaskInstance& inst = cfg.tasks[static_cast<size_t>(i)];
        TaskArtifacts art;
        art.inst = inst;
        art.spec.task_id = i;
        art.spec.num_tasks = T;
        art.spec.embed_dim = cfg.task_embed_dim;
        art.spec.decoder_kind = decoder_kind_of(inst.eval_protocol);
        if (inst.level_factors.empty() || inst.level_factors[0] != 1)
            throw ContractError("TaskInstance: level_factors must start with 1");

        // Task encoders act per token on the source tokens, so every
        // task target is still a frozen deterministic map of the raw
        // input (affine of affine is affine in x).
        const double ch_std = 1.0 / std::sqrt(static_cast<double>(D));
        switch (inst.encoder_kind) {
            case EncoderKind::affine:
            case EncoderKind::multiscale_pyramid: {
                if (inst.opposes >= 0) {
                    if (inst.opposes >= i)
                        throw ContractError("TaskInstance: opposes must name an earlier task");
                    const auto& other = w.tasks[static_cast<size_t>(inst.opposes)];
                    if (other.inst.encoder_kind != EncoderKind::affine &&
                        other.inst.encoder_kind != EncoderKind::multiscale_pyramid)
                        throw ContractError("TaskInstance: opposes requires an affine-family task");
                    auto negate = [](const Tensor& t) {
                        std::vector<double> v = t.data();
                        for (double& x : v) x = -x;
                        return Tensor::from(t.shape(), std::move(v));
                    };
                    art.enc.emplace_back("w", negate(other.enc[0].second));
                    art.enc.emplace_back("b", negate(other.enc[1].second));
                } else {
                    // Identity plus small mixing, not a zero-centered map:
                    // (1-tau)I + tau*W must stay invertible along the whole
                    // path or the conditional velocity blows up mid-path
                    // (sigma_min drops to ~1e-2 past tau=0.5 for a pure
                    // Gaussian W) and no desk-scale field can fit it.
                    Tensor g = Tensor::randn({D, D}, rng, 0.25 * ch_std);
                    std::vector<double> wv = g.data();
                    for (int d = 0; d < D; ++d) wv[static_cast<size_t>(d) * D + d] += 1.0;
                    art.enc.emplace_back("w", Tensor::from({D, D}, std::move(wv)));
                    art.enc.emplace_back("b", Tensor::randn({D}, rng, 0.1));
                }
                break;
            }
            case EncoderKind::orthogonal:
                art.enc.emplace_back("q", orthogonal_matrix(rng, D));
                break;
            case EncoderKind::mlp_nonlinear: {
                if (inst.teacher_hidden < 1 || inst.teacher_depth < 1)
                    throw ContractError("TaskInstance: teacher size must be positive");
                // depth gelu-MLP residual blocks, each a contraction on
                // the residual branch (down-projection scaled 0.15) so
                // the whole teacher is a diffeomorphism and the bridge
                // from source tokens never folds back on itself.
                const int h = inst.teacher_hidden;
                for (int l = 0; l < inst.teacher_depth; ++l) {
                    const std::string s = std::to_string(l);
                    art.enc.emplace_back("w" + s, Tensor::randn({D, h}, rng, ch_std));
                    art.enc.emplace_back("b" + s, Tensor::randn({h}, rng, 0.1));
                    art.enc.emplace_back(
                        "u" + s,
                        Tensor::randn({h, D}, rng, 0.15 / std::sqrt(static_cast<double>(h))));
                    art.enc.emplace_back("c" + s, Tensor::randn({D}, rng, 0.1));
                }
                break;
            }
        }

        switch (art.spec.decoder_kind) {
            case DecoderKind::classify:
                art.dec.emplace_back(
                    "r", Tensor::randn({D, cfg.n_classes}, rng, 1.0 / std::sqrt(static_cast<double>(D))));
                art.dec.emplace_back("rb", Tensor::zeros({cfg.n_classes}));
                break;
            case DecoderKind::dense_regress:
                break;
            case DecoderKind::retrieve: {
                if (inst.encoder_kind != EncoderKind::affine)
                    throw ContractError("TaskInstance: retrieval requires an affine encoder");
                auto perturb = [&](const Tensor& t, double base_std) {
                    std::vector<double> v = t.data();
                    for (double& x : v) x += inst.pair_noise * base_std * rng.normal();
                    return Tensor::from(t.shape(), std::move(v));
                };
                art.dec.emplace_back("w2", perturb(art.enc[0].second, 0.25 * ch_std));
                art.dec.emplace_back("b2", perturb(art.enc[1].second, 0.1));
                break;
            }
        }
        w.tasks.push_back(std::move(art));
    }

    // Labels last so encoder/decoder rng draws stay position-stable.
    for (int i = 0; i < T; ++i) {
        auto& art = w.tasks[static_cast<size_t>(i)];
        if (art.spec.decoder_kind != DecoderKind::classify) continue;
        art.labels_train = classify_labels(w, i, w.train_x);
        art.labels_val = classify_labels(w, i, w.val_x);
    }
    return w;
}

Tensor source_tokens(const SyntheticWorld& w, const Tensor& x) {
    return tokens_of(x, w.src_w, w.src_b, w.tokens(), w.cfg.channels);
}

std::vector<Tensor> task_targets(const SyntheticWorld& w, int task, const Tensor& x) {
    const TaskArtifacts& art = task_at(w, task);
    Tensor src = source_tokens(w, x);
    auto channel_affine = [&](const Tensor& t, const Tensor& cw, const Tensor& cb) {
        return diff::broadcast_add(diff::matmul(t, cw), cb);
    };
    Tensor base;
    switch (art.inst.encoder_kind) {
        case EncoderKind::affine:
        case EncoderKind::multiscale_pyramid:
            base = channel_affine(src, art.enc[0].second, art.enc[1].second);
            break;
        case EncoderKind::orthogonal:
            base = diff::matmul(src, art.enc[0].second);
            break;
        case EncoderKind::mlp_nonlinear: {
            Tensor h = src;
            for (int l = 0; l < art.inst.teacher_depth; ++l) {
                const size_t b = static_cast<size_t>(4 * l);
                Tensor mid = diff::gelu(
                    channel_affine(h, art.enc[b].second, art.enc[b + 1].second));
                h = diff::add(h, channel_affine(mid, art.enc[b + 2].second,
                                                art.enc[b + 3].second));
            }
            base = h;
            break;
        }
    }
    if (art.inst.encoder_kind != EncoderKind::multiscale_pyramid) return {base};
    RepBatch rb;
    rb.data = base;
    rb.grid_side = w.cfg.grid_side;
    MultiScaleTokens ms = multiscale_sample(rb, art.inst.level_factors);
    std::vector<Tensor> out;
    for (auto& lvl : ms.per_level) out.push_back(lvl.data);
    return out;
}

Tensor mean_pool_tokens(const Tensor& r) {
    if (r.rank() != 3) throw ContractError("mean_pool_tokens: input must be [n, tokens, channels]");
    const int n = r.shape()[0], P = r.shape()[1], D = r.shape()[2];
    std::vector<double> out(static_cast<size_t>(n) * D, 0.0);
    const double inv = 1.0 / P;
    for (int i = 0; i < n; ++i) {
        double* dst = out.data() + static_cast<size_t>(i) * D;
        for (int p = 0; p < P; ++p) {
            const double* tok = r.data().data() + (static_cast<size_t>(i) * P + p) * D;
            for (int d = 0; d < D; ++d) dst[d] += tok[d];
        }
        for (int d = 0; d < D; ++d) dst[d] *= inv;
    }
    return Tensor::from({n, D}, std::move(out));
}

std::vector<int> classify_labels(const SyntheticWorld& w, int task, const Tensor& x) {
    const TaskArtifacts& art = task_at(w, task);
    if (art.spec.decoder_kind != DecoderKind::classify)
        throw ContractError("classify_labels: task has no classify decoder");
    Tensor pooled = mean_pool_tokens(task_targets(w, task, x)[0]);
    Tensor logits = diff::affine(pooled, art.dec[0].second, art.dec[1].second);
    return argmax_rows(logits);
}

TaskData materialize(const SyntheticWorld& w, int task, bool train_split, AnchorMode anchor) {
    const TaskArtifacts& art = task_at(w, task);
    const Tensor& x = train_split ? w.train_x : w.val_x;
    TaskData td;
    td.spec = art.spec;
    td.level_factors = art.inst.level_factors;

    Tensor src0 = source_tokens(w, x);
    RepBatch rb;
    rb.data = src0;
    rb.grid_side = w.cfg.grid_side;
    MultiScaleTokens srcs = multiscale_sample(rb, td.level_factors);
    td.target_levels = task_targets(w, task, x);
    if (td.target_levels.size() != srcs.per_level.size())
        throw ContractError("materialize: target levels disagree with factors");

    if (anchor == AnchorMode::noise) {
        Rng nrng(mix_seed(w.cfg.seed, 0xA0C0FFEEull + static_cast<uint64_t>(task) * 2 +
                                          (train_split ? 0 : 1)));
        for (auto& lvl : srcs.per_level)
            lvl.data = Tensor::randn(lvl.data.shape(), nrng, 1.0);
        td.cond_extra_all = mean_pool_tokens(src0);
    }
    for (auto& lvl : srcs.per_level) {
        td.grid_sides.push_back(lvl.grid_side);
        td.source_levels.push_back(lvl.data);
    }
    td.validate();
    return td;
}

double MetricsRecord::metric(const std::string& name) const {
    for (const auto& m : metrics)
        if (m.name == name) return m.value;
    throw ContractError("metrics record has no metric named " + name);
}

double AblationRow::metric(const std::string& name) const {
    for (const auto& m : metrics)
        if (m.name == name) return m.value;
    throw ContractError("ablation row has no metric named " + name);
}

namespace {

// Final per-level states of one batch under the model being evaluated.
std::vector<Tensor> transport_batch(const EvalModel& model, const TaskData& td,
                                    const std::vector<int>& rows, int N) {
    TrainBatch batch = td.gather(rows);
    MultiScaleTokens anchors;
    for (auto& lp : batch.levels) anchors.per_level.push_back(lp.source);
    const Tensor* extra = batch.cond_extra.defined() ? &batch.cond_extra : nullptr;

    std::vector<Tensor> finals;
    switch (model.kind) {
        case EvalModel::Kind::flow: {
            if (!model.params) throw ContractError("eval: flow model needs params");
            MultiScaleTokens out = euler_integrate(*model.params, anchors, td.spec, N, extra);
            for (auto& lvl : out.per_level) finals.push_back(lvl.data);
            break;
        }
        case EvalModel::Kind::direct: {
            if (!model.params) throw ContractError("eval: direct model needs params");
            for (size_t l = 0; l < batch.levels.size(); ++l)
                finals.push_back(predict_velocity(*model.params, batch.levels[l].source.data, 0.0,
                                                  static_cast<int>(l), td.spec, extra));
            break;
        }
        case EvalModel::Kind::oracle: {
            std::vector<Tensor> fields;
            for (auto& lp : batch.levels)
                fields.push_back(true_velocity(lp.source, lp.target).data);
            MultiScaleTokens out = euler_integrate_fn(
                [&](const Tensor&, double, int level) { return fields[static_cast<size_t>(level)]; },
                anchors, N);
            for (auto& lvl : out.per_level) finals.push_back(lvl.data);
            break;
        }
    }
    return finals;
}

std::vector<std::vector<int>> eval_chunks(int n, int batch) {
    std::vector<std::vector<int>> chunks;
    for (int off = 0; off < n; off += batch) {
        std::vector<int> rows;
        for (int i = off; i < std::min(n, off + batch); ++i) rows.push_back(i);
        chunks.push_back(std::move(rows));
    }
    return chunks;
}

AnchorMode anchor_mode_of(const EvalModel& model) {
    return model.params && model.params->arch.cond_extra > 0 ? AnchorMode::noise
                                                             : AnchorMode::tokens;
}

// Pooled level-0 features of the transported representation for every
// sample of the split, in order.
Tensor transported_features(const EvalModel& model, const SyntheticWorld& w, int task, int N,
                            bool train_split, int eval_batch) {
    TaskData td = materialize(w, task, train_split, anchor_mode_of(model));
    const int n = td.num_samples();
    const int D = w.cfg.channels;
    std::vector<double> feats(static_cast<size_t>(n) * D);
    for (const auto& rows : eval_chunks(n, eval_batch)) {
        Tensor f0 = mean_pool_tokens(transport_batch(model, td, rows, N)[0]);
        std::copy_n(f0.data().data(), f0.data().size(),
                    feats.data() + static_cast<size_t>(rows[0]) * D);
    }
    return Tensor::from({n, D}, std::move(feats));
}

double probe_accuracy_of(const Tensor& feats, const Tensor& rw, const Tensor& rbias,
                         const std::vector<int>& labels) {
    Tensor logits = diff::affine(feats, rw, rbias);
    std::vector<int> pred = argmax_rows(logits);
    int correct = 0;
    for (size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace

MetricsRecord eval_zero_shot(const EvalModel& model, const SyntheticWorld& w, int task, int N,
                             int eval_batch) {
    const TaskArtifacts& art = task_at(w, task);
    MetricsRecord rec;
    rec.task_id = task;
    rec.task_name = art.inst.name;
    rec.split = "val";

    switch (art.inst.eval_protocol) {
        case EvalProtocol::probe_accuracy: {
            Tensor feats = transported_features(model, w, task, N, false, eval_batch);
            rec.metrics.push_back({"accuracy", probe_accuracy_of(feats, art.dec[0].second,
                                                                 art.dec[1].second,
                                                                 art.labels_val)});
            break;
        }
        case EvalProtocol::per_token_mse: {
            TaskData td = materialize(w, task, false, anchor_mode_of(model));
            const int n = td.num_samples();
            std::vector<double> sq(td.level_factors.size(), 0.0);
            std::vector<int64_t> cnt(td.level_factors.size(), 0);
            for (const auto& rows : eval_chunks(n, eval_batch)) {
                std::vector<Tensor> finals = transport_batch(model, td, rows, N);
                TrainBatch batch = td.gather(rows);
                for (size_t l = 0; l < finals.size(); ++l) {
                    const auto& a = finals[l].data();
                    const auto& b = batch.levels[l].target.data.data();
                    for (size_t i = 0; i < a.size(); ++i) sq[l] += (a[i] - b[i]) * (a[i] - b[i]);
                    cnt[l] += static_cast<int64_t>(a.size());
                }
            }
            double total = 0.0;
            for (size_t l = 0; l < sq.size(); ++l) {
                const double mse = sq[l] / static_cast<double>(cnt[l]);
                rec.metrics.push_back({"mse_level" + std::to_string(l), mse});
                total += mse;
            }
            rec.metrics.push_back({"mse_mean", total / static_cast<double>(sq.size())});
            break;
        }
        case EvalProtocol::recall_at_k: {
            Tensor queries = transported_features(model, w, task, N, false, eval_batch);
            Tensor gallery_tokens = diff::broadcast_add(
                diff::matmul(source_tokens(w, w.val_x), art.dec[0].second), art.dec[1].second);
            Tensor gallery = mean_pool_tokens(gallery_tokens);
            const int n = queries.shape()[0];
            const int D = queries.shape()[1];
            auto norm_of = [D](const Tensor& t, int row) {
                const double* p = t.data().data() + static_cast<size_t>(row) * D;
                double s = 0.0;
                for (int d = 0; d < D; ++d) s += p[d] * p[d];
                return std::sqrt(s);
            };
            int hit1 = 0, hit5 = 0, hit10 = 0;
            for (int i = 0; i < n; ++i) {
                const double* q = queries.data().data() + static_cast<size_t>(i) * D;
                const double qn = norm_of(queries, i);
                std::vector<std::pair<double, int>> sims(static_cast<size_t>(n));
                for (int j = 0; j < n; ++j) {
                    const double* g = gallery.data().data() + static_cast<size_t>(j) * D;
                    double dot = 0.0;
                    for (int d = 0; d < D; ++d) dot += q[d] * g[d];
                    const double denom = qn * norm_of(gallery, j);
                    sims[static_cast<size_t>(j)] = {denom > 0 ? dot / denom : -2.0, j};
                }
                std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
                    return a.first != b.first ? a.first > b.first : a.second < b.second;
                });
                int rank = n;
                for (int r = 0; r < n; ++r)
                    if (sims[static_cast<size_t>(r)].second == i) {
                        rank = r;
                        break;
                    }
                if (rank < 1) ++hit1;
                if (rank < 5) ++hit5;
                if (rank < 10) ++hit10;
            }
            const double dn = static_cast<double>(n);
            rec.metrics.push_back({"recall_at_1", hit1 / dn});
            rec.metrics.push_back({"recall_at_5", hit5 / dn});
            rec.metrics.push_back({"recall_at_10", hit10 / dn});
            break;
        }
    }
    return rec;
}

MetricsRecord eval_fine_tuned(const EvalModel& model, const SyntheticWorld& w, int task, int N,
                              int decoder_epochs, int eval_batch) {
    const TaskArtifacts& art = task_at(w, task);
    if (art.inst.eval_protocol != EvalProtocol::probe_accuracy || decoder_epochs == 0)
        return eval_zero_shot(model, w, task, N, eval_batch);

    Tensor train_feats = transported_features(model, w, task, N, true, eval_batch);
    const int n = train_feats.shape()[0];
    const int C = w.cfg.n_classes;

    opt::ParamMap probe;
    {
        Tensor pw = art.dec[0].second.clone();
        Tensor pb = art.dec[1].second.clone();
        pw.set_requires_grad(true);
        pb.set_requires_grad(true);
        probe.emplace("w", std::move(pw));
        probe.emplace("b", std::move(pb));
    }
    const double teacher_train_acc =
        probe_accuracy_of(train_feats, art.dec[0].second, art.dec[1].second, art.labels_train);

    opt::AdamWConfig ocfg;
    ocfg.lr = 1e-2;
    ocfg.weight_decay = 0.0;
    opt::AdamWState ostate;
    Rng rng(mix_seed(w.cfg.seed, 0xF17E0000ull + static_cast<uint64_t>(task)));
    const int probe_batch = 256;
    for (int e = 0; e < decoder_epochs; ++e) {
        std::vector<int> perm = rng.permutation(n);
        for (size_t off = 0; off < perm.size(); off += probe_batch) {
            const size_t end = std::min(perm.size(), off + probe_batch);
            const std::vector<int> rows(perm.begin() + off, perm.begin() + end);
            const int B = static_cast<int>(rows.size());
            std::vector<double> fb(static_cast<size_t>(B) * w.cfg.channels);
            std::vector<double> onehot(static_cast<size_t>(B) * C, 0.0);
            for (int i = 0; i < B; ++i) {
                std::copy_n(train_feats.data().data() +
                                static_cast<size_t>(rows[static_cast<size_t>(i)]) * w.cfg.channels,
                            w.cfg.channels, fb.data() + static_cast<size_t>(i) * w.cfg.channels);
                onehot[static_cast<size_t>(i) * C +
                       art.labels_train[static_cast<size_t>(rows[static_cast<size_t>(i)])]] = 1.0;
            }
            Tensor fx = Tensor::from({B, w.cfg.channels}, std::move(fb));
            Tensor ty = Tensor::from({B, C}, std::move(onehot));
            diff::GradMap grads;
            {
                diff::TapeScope ts;
                Tensor logits = diff::affine(fx, probe.at("w"), probe.at("b"));
                Tensor loss = diff::scale(diff::sum_of_squares(diff::sub(logits, ty)),
                                          1.0 / static_cast<double>(B * C));
                grads = ts.tape.backward(loss);
            }
            opt::adamw_step(probe, grads, ocfg, ostate);
        }
    }
    const double tuned_train_acc =
        probe_accuracy_of(train_feats, probe.at("w"), probe.at("b"), art.labels_train);

    // Keep whichever readout classifies the train split better; ties
    // keep the teacher (the zero-shot decoder).
    const bool use_tuned = tuned_train_acc > teacher_train_acc;
    Tensor val_feats = transported_features(model, w, task, N, false, eval_batch);
    const double acc = use_tuned
                           ? probe_accuracy_of(val_feats, probe.at("w"), probe.at("b"), art.labels_val)
                           : probe_accuracy_of(val_feats, art.dec[0].second, art.dec[1].second,
                                               art.labels_val);
    MetricsRecord rec;
    rec.task_id = task;
    rec.task_name = art.inst.name;
    rec.split = "val";
    rec.metrics.push_back({"accuracy", acc});
    rec.metrics.push_back({"decoder_retrained", use_tuned ? 1.0 : 0.0});
    return rec;
}

MetricsRecord osd_baseline(const SyntheticWorld& w, int task, const ArchDescriptor& arch,
                           const FlowConfig& cfg, VelocityParams* out_params) {
    VelocityParams params = init_params(arch, cfg.seed);
    opt::AdamWState ostate;
    std::vector<TaskData> tds = {materialize(w, task, true)};
    train(params, tds, cfg, ostate, TrainObjective::direct);
    EvalModel model;
    model.kind = EvalModel::Kind::direct;
    model.params = &params;
    MetricsRecord rec = eval_zero_shot(model, w, task, cfg.N);
    if (out_params) *out_params = params;
    return rec;
}

MetricsRecord noise_anchor_baseline(const SyntheticWorld& w, int task, const ArchDescriptor& arch,
                                    const FlowConfig& cfg, VelocityParams* out_params) {
    ArchDescriptor na = arch;
    na.cond_extra = w.cfg.channels;
    VelocityParams params = init_params(na, cfg.seed);
    opt::AdamWState ostate;
    std::vector<TaskData> tds = {materialize(w, task, true, AnchorMode::noise)};
    train(params, tds, cfg, ostate, TrainObjective::velocity);
    EvalModel model;
    model.kind = EvalModel::Kind::flow;
    model.params = &params;
    MetricsRecord rec = eval_zero_shot(model, w, task, cfg.N);
    if (out_params) *out_params = params;
    return rec;
}

std::vector<AblationRow> task_embed_ablation(const SyntheticWorld& w, const ArchDescriptor& arch,
                                             const FlowConfig& cfg) {
    if (w.tasks.size() < 2)
        throw ContractError("task_embed_ablation: needs at least two tasks");
    std::vector<TaskData> tds;
    for (int t = 0; t < static_cast<int>(w.tasks.size()); ++t)
        tds.push_back(materialize(w, t, true));

    const std::pair<TaskEmbedVariant, const char*> variants[] = {
        {TaskEmbedVariant::circular, "circular"},
        {TaskEmbedVariant::random_frozen, "random"},
        {TaskEmbedVariant::constant, "constant"},
    };
    std::vector<AblationRow> rows;
    for (const auto& [variant, vname] : variants) {
        ArchDescriptor av = arch;
        av.task_embed = variant;
        VelocityParams params = init_params(av, cfg.seed);
        opt::AdamWState ostate;
        std::vector<EpochStats> hist = train(params, tds, cfg, ostate);
        AblationRow row;
        row.variant = vname;
        double combined = 0.0;
        for (size_t t = 0; t < tds.size(); ++t) {
            double last = 0.0;
            for (const auto& st : hist)
                if (st.task_id == static_cast<int>(t)) last = st.mean_loss;
            row.metrics.push_back({"loss_task" + std::to_string(t), last});
            combined += last;
        }
        row.metrics.push_back({"combined_loss", combined / static_cast<double>(tds.size())});
        rows.push_back(std::move(row));
    }
    return rows;
}

const char* encoder_kind_name(EncoderKind k) {
    switch (k) {
        case EncoderKind::affine: return "affine";
        case EncoderKind::orthogonal: return "orthogonal";
        case EncoderKind::mlp_nonlinear: return "mlp_nonlinear";
        case EncoderKind::multiscale_pyramid: return "multiscale_pyramid";
    }
    return "?";
}

EncoderKind encoder_kind_from(const std::string& s) {
    if (s == "affine") return EncoderKind::affine;
    if (s == "orthogonal") return EncoderKind::orthogonal;
    if (s == "mlp_nonlinear") return EncoderKind::mlp_nonlinear;
    if (s == "multiscale_pyramid") return EncoderKind::multiscale_pyramid;
    throw ConfigError("unknown encoder kind: " + s);
}

const char* eval_protocol_name(EvalProtocol p) {
    switch (p) {
        case EvalProtocol::probe_accuracy: return "probe_accuracy";
        case EvalProtocol::per_token_mse: return "per_token_mse";
        case EvalProtocol::recall_at_k: return "recall_at_k";
    }
    return "?";
}

EvalProtocol eval_protocol_from(const std::string& s) {
    if (s == "probe_accuracy") return EvalProtocol::probe_accuracy;
    if (s == "per_token_mse") return EvalProtocol::per_token_mse;
    if (s == "recall_at_k") return EvalProtocol::recall_at_k;
    throw ConfigError("unknown eval protocol: " + s);
}

namespace {

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += '|';
        out += std::to_string(v[i]);
    }
    return out;
}

std::vector<int> split_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, '|')) out.push_back(std::stoi(part));
    return out;
}

Tensor labels_tensor(const std::vector<int>& labels) {
    std::vector<double> v(labels.begin(), labels.end());
    return Tensor::from({static_cast<int>(labels.size())}, std::move(v));
}

std::vector<int> labels_from_tensor(const Tensor& t) {
    std::vector<int> out;
    out.reserve(t.data().size());
    for (double v : t.data()) out.push_back(static_cast<int>(v));
    return out;
}

}  // namespace

void save_world(const std::string& path, const SyntheticWorld& w) {
    Container c;
    std::vector<std::pair<std::string, std::string>> kv;
    kv.emplace_back("kind", "world");
    kv.emplace_back("seed", std::to_string(w.cfg.seed));
    kv.emplace_back("input_dim", std::to_string(w.cfg.input_dim));
    kv.emplace_back("grid_side", std::to_string(w.cfg.grid_side));
    kv.emplace_back("channels", std::to_string(w.cfg.channels));
    kv.emplace_back("n_train", std::to_string(w.cfg.n_train));
    kv.emplace_back("n_val", std::to_string(w.cfg.n_val));
    kv.emplace_back("n_classes", std::to_string(w.cfg.n_classes));
    kv.emplace_back("task_embed_dim", std::to_string(w.cfg.task_embed_dim));
    kv.emplace_back("n_tasks", std::to_string(w.tasks.size()));
    for (size_t i = 0; i < w.tasks.size(); ++i) {
        const TaskInstance& inst = w.tasks[i].inst;
        std::string line = inst.name;
        line += ",";
        line += encoder_kind_name(inst.encoder_kind);
        line += ",";
        line += eval_protocol_name(inst.eval_protocol);
        line += "," + join_ints(inst.level_factors);
        line += "," + std::to_string(inst.teacher_hidden);
        line += "," + std::to_string(inst.teacher_depth);
        line += "," + std::to_string(inst.opposes);
        line += "," + format_number(inst.pair_noise);
        kv.emplace_back("task" + std::to_string(i), line);
    }
    c.metadata = encode_metadata(kv);
    c.tensors.emplace_back("train_x", w.train_x);
    c.tensors.emplace_back("val_x", w.val_x);
    c.tensors.emplace_back("src_w", w.src_w);
    c.tensors.emplace_back("src_b", w.src_b);
    for (size_t i = 0; i < w.tasks.size(); ++i) {
        const std::string p = "task" + std::to_string(i) + ".";
        for (const auto& [n, t] : w.tasks[i].enc) c.tensors.emplace_back(p + "enc." + n, t);
        for (const auto& [n, t] : w.tasks[i].dec) c.tensors.emplace_back(p + "dec." + n, t);
        if (!w.tasks[i].labels_train.empty()) {
            c.tensors.emplace_back(p + "labels_train", labels_tensor(w.tasks[i].labels_train));
            c.tensors.emplace_back(p + "labels_val", labels_tensor(w.tasks[i].labels_val));
        }
    }
    save_container(path, c);
}

SyntheticWorld load_world(const std::string& path) {
    Container c = load_container(path);
    if (metadata_value(c.metadata, "kind") != "world")
        throw IoError("not a world file: " + path);
    SyntheticWorld w;
    auto meta_int = [&](const std::string& key) {
        const std::string v = metadata_value(c.metadata, key);
        if (v.empty()) throw IoError("world file missing key " + key + ": " + path);
        return std::stoll(v);
    };
    w.cfg.seed = static_cast<uint64_t>(meta_int("seed"));
    w.cfg.input_dim = static_cast<int>(meta_int("input_dim"));
    w.cfg.grid_side = static_cast<int>(meta_int("grid_side"));
    w.cfg.channels = static_cast<int>(meta_int("channels"));
    w.cfg.n_train = static_cast<int>(meta_int("n_train"));
    w.cfg.n_val = static_cast<int>(meta_int("n_val"));
    w.cfg.n_classes = static_cast<int>(meta_int("n_classes"));
    w.cfg.task_embed_dim = static_cast<int>(meta_int("task_embed_dim"));
    const int T = static_cast<int>(meta_int("n_tasks"));
    w.train_x = c.get("train_x");
    w.val_x = c.get("val_x");
    w.src_w = c.get("src_w");
    w.src_b = c.get("src_b");
    for (int i = 0; i < T; ++i) {
        const std::string line = metadata_value(c.metadata, "task" + std::to_string(i));
        if (line.empty()) throw IoError("world file missing task entry: " + path);
        std::vector<std::string> parts;
        std::stringstream ss(line);
        std::string part;
        while (std::getline(ss, part, ',')) parts.push_back(part);
        if (parts.size() != 8) throw IoError("world file has a malformed task entry: " + path);
        TaskInstance inst;
        inst.name = parts[0];
        inst.encoder_kind = encoder_kind_from(parts[1]);
        inst.eval_protocol = eval_protocol_from(parts[2]);
        inst.level_factors = split_ints(parts[3]);
        inst.teacher_hidden = std::stoi(parts[4]);
        inst.teacher_depth = std::stoi(parts[5]);
        inst.opposes = std::stoi(parts[6]);
        inst.pair_noise = std::stod(parts[7]);
        w.cfg.tasks.push_back(inst);

        TaskArtifacts art;
        art.inst = inst;
        art.spec.task_id = i;
        art.spec.num_tasks = T;
        art.spec.embed_dim = w.cfg.task_embed_dim;
        art.spec.decoder_kind = decoder_kind_of(inst.eval_protocol);
        const std::string p = "task" + std::to_string(i) + ".";
        switch (inst.encoder_kind) {
            case EncoderKind::affine:
            case EncoderKind::multiscale_pyramid:
                art.enc.emplace_back("w", c.get(p + "enc.w"));
                art.enc.emplace_back("b", c.get(p + "enc.b"));
                break;
            case EncoderKind::orthogonal:
                art.enc.emplace_back("q", c.get(p + "enc.q"));
                break;
            case EncoderKind::mlp_nonlinear: {
                for (int l = 0; l < inst.teacher_depth; ++l) {
                    const std::string s = std::to_string(l);
                    art.enc.emplace_back("w" + s, c.get(p + "enc.w" + s));
                    art.enc.emplace_back("b" + s, c.get(p + "enc.b" + s));
                    art.enc.emplace_back("u" + s, c.get(p + "enc.u" + s));
                    art.enc.emplace_back("c" + s, c.get(p + "enc.c" + s));
                }
                break;
            }
        }
        switch (art.spec.decoder_kind) {
            case DecoderKind::classify:
                art.dec.emplace_back("r", c.get(p + "dec.r"));
                art.dec.emplace_back("rb", c.get(p + "dec.rb"));
                art.labels_train = labels_from_tensor(c.get(p + "labels_train"));
                art.labels_val = labels_from_tensor(c.get(p + "labels_val"));
                break;
            case DecoderKind::dense_regress:
                break;
            case DecoderKind::retrieve:
                art.dec.emplace_back("w2", c.get(p + "dec.w2"));
                art.dec.emplace_back("b2", c.get(p + "dec.b2"));
                break;
        }
        w.tasks.push_back(std::move(art));
    }
    return w;
}

}  // namespace vb
