#include "visbridge/flow.hpp"

#include <cmath>
#include <string>

#include "visbridge/common.hpp"
#include "visbridge/ops.hpp"

namespace vb {

using diff::Tensor;

void RepBatch::validate() const {
    if (!data.defined() || data.rank() != 3)
        throw ContractError("RepBatch: data must be [batch, tokens, channels]");
    if (grid_side < 1 || grid_side * grid_side != data.shape()[1])
        throw ContractError("RepBatch: tokens must form a grid_side^2 grid");
    for (double v : data.data())
        if (!std::isfinite(v)) throw NumericError("RepBatch: non-finite data");
}

void FlowConfig::validate() const {
    if (K < 1 || N < 1) throw ContractError("FlowConfig: K and N must be >= 1");
    if (epochs < 0) throw ContractError("FlowConfig: epochs must be >= 0");
    // lr 0 is allowed: train_step then evaluates the loss without
    // touching parameters (the no-op training probe).
    if (lr < 0.0) throw ContractError("FlowConfig: learning rate must not be negative");
    if (batch_size < 1) throw ContractError("FlowConfig: batch_size must be >= 1");
}

MultiScaleTokens multiscale_sample(const RepBatch& r0, const std::vector<int>& factors) {
    r0.validate();
    if (factors.empty()) throw ContractError("multiscale_sample: at least one factor");
    if (factors[0] != 1)
        throw ContractError("multiscale_sample: first factor must be 1 (level 0 is the input)");
    MultiScaleTokens out;
    const int B = r0.data.shape()[0];
    const int D = r0.data.shape()[2];
    const int g = r0.grid_side;
    const auto& src = r0.data.data();
    for (size_t li = 0; li < factors.size(); ++li) {
        const int f = factors[li];
        if (f < 1 || g % f != 0)
            throw ContractError("multiscale_sample: factor must divide the grid side");
        RepBatch rb;
        rb.level = static_cast<int>(li);
        rb.grid_side = g / f;
        if (f == 1) {
            rb.data = r0.data.clone();
        } else {
            const int gs = g / f;
            std::vector<double> pooled(static_cast<size_t>(B) * gs * gs * D, 0.0);
            const double inv = 1.0 / (f * f);
            for (int b = 0; b < B; ++b)
                for (int i = 0; i < gs; ++i)
                    for (int j = 0; j < gs; ++j) {
                        double* cell =
                            pooled.data() + ((static_cast<size_t>(b) * gs + i) * gs + j) * D;
                        for (int di = 0; di < f; ++di)
                            for (int dj = 0; dj < f; ++dj) {
                                const double* tok =
                                    src.data() +
                                    ((static_cast<size_t>(b) * g + i * f + di) * g + j * f + dj) * D;
                                for (int d = 0; d < D; ++d) cell[d] += tok[d];
                            }
                        for (int d = 0; d < D; ++d) cell[d] *= inv;
                    }
            rb.data = Tensor::from({B, gs * gs, D}, std::move(pooled));
        }
        out.per_level.push_back(std::move(rb));
    }
    return out;
}

RepBatch interpolate(const RepBatch& r0, const RepBatch& rt, int k, int K) {
    if (r0.data.shape() != rt.data.shape())
        throw ContractError("interpolate: endpoint shapes differ");
    if (K < 1 || k < 0 || k > K) throw ContractError("interpolate: k outside [0, K]");
    const double a = static_cast<double>(k) / static_cast<double>(K);
    const double b = 1.0 - a;
    const auto& d0 = r0.data.data();
    const auto& dt = rt.data.data();
    std::vector<double> out(d0.size());
    for (size_t i = 0; i < d0.size(); ++i) out[i] = b * d0[i] + a * dt[i];
    RepBatch rb;
    rb.level = r0.level;
    rb.grid_side = r0.grid_side;
    rb.data = Tensor::from(r0.data.shape(), std::move(out));
    return rb;
}

RepBatch true_velocity(const RepBatch& r0, const RepBatch& rt) {
    if (r0.data.shape() != rt.data.shape())
        throw ContractError("true_velocity: endpoint shapes differ");
    const auto& d0 = r0.data.data();
    const auto& dt = rt.data.data();
    std::vector<double> out(d0.size());
    for (size_t i = 0; i < d0.size(); ++i) out[i] = dt[i] - d0[i];
    RepBatch rb;
    rb.level = r0.level;
    rb.grid_side = r0.grid_side;
    rb.data = Tensor::from(r0.data.shape(), std::move(out));
    return rb;
}

int TaskData::num_samples() const {
    return source_levels.empty() ? 0 : source_levels[0].shape()[0];
}

void TaskData::validate() const {
    if (source_levels.empty() || source_levels.size() != target_levels.size() ||
        source_levels.size() != level_factors.size() || grid_sides.size() != level_factors.size())
        throw ContractError("TaskData: per-level arrays out of step");
    const int n = num_samples();
    for (size_t l = 0; l < source_levels.size(); ++l) {
        if (source_levels[l].shape() != target_levels[l].shape())
            throw ContractError("TaskData: source/target shapes differ at a level");
        if (source_levels[l].shape()[0] != n)
            throw ContractError("TaskData: sample counts differ across levels");
        if (grid_sides[l] * grid_sides[l] != source_levels[l].shape()[1])
            throw ContractError("TaskData: token count is not grid_side^2");
    }
    if (cond_extra_all.defined() && cond_extra_all.shape()[0] != n)
        throw ContractError("TaskData: cond_extra sample count differs");
}

namespace {

Tensor gather_rows(const Tensor& all, const std::vector<int>& rows) {
    std::vector<int> shape = all.shape();
    const int64_t row_sz = all.size() / shape[0];
    std::vector<double> out(rows.size() * static_cast<size_t>(row_sz));
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy_n(all.data().data() + rows[i] * row_sz, row_sz,
                    out.data() + static_cast<int64_t>(i) * row_sz);
    shape[0] = static_cast<int>(rows.size());
    return Tensor::from(std::move(shape), std::move(out));
}

}  // namespace

TrainBatch TaskData::gather(const std::vector<int>& rows) const {
    TrainBatch tb;
    for (size_t l = 0; l < source_levels.size(); ++l) {
        LevelPair lp;
        lp.source.level = static_cast<int>(l);
        lp.source.grid_side = grid_sides[l];
        lp.source.data = gather_rows(source_levels[l], rows);
        lp.target.level = static_cast<int>(l);
        lp.target.grid_side = grid_sides[l];
        lp.target.data = gather_rows(target_levels[l], rows);
        tb.levels.push_back(std::move(lp));
    }
    if (cond_extra_all.defined()) tb.cond_extra = gather_rows(cond_extra_all, rows);
    return tb;
}

double train_step(VelocityParams& params, const TrainBatch& batch, const TaskSpec& spec,
                  const FlowConfig& cfg, opt::AdamWState& ostate, Rng& rng,
                  TrainObjective objective) {
    cfg.validate();
    if (batch.levels.empty()) throw ContractError("train_step: empty batch");
    const int k = static_cast<int>(rng.uniform_int(cfg.k_inclusive ? cfg.K + 1 : cfg.K));
    const double tau = static_cast<double>(k) / static_cast<double>(cfg.K);
    const Tensor* extra = batch.cond_extra.defined() ? &batch.cond_extra : nullptr;

    double loss_value = 0.0;
    diff::GradMap grads;
    {
        diff::TapeScope ts;
        Tensor total;
        int64_t elems = 0;
        for (size_t l = 0; l < batch.levels.size(); ++l) {
            const LevelPair& lp = batch.levels[l];
            try {
                Tensor pred, target;
                if (objective == TrainObjective::velocity) {
                    RepBatch rk = interpolate(lp.source, lp.target, k, cfg.K);
                    target = true_velocity(lp.source, lp.target).data;
                    pred = predict_velocity(params, rk.data, tau, static_cast<int>(l), spec, extra);
                } else {
                    target = lp.target.data;
                    pred = predict_velocity(params, lp.source.data, 0.0, static_cast<int>(l), spec,
                                            extra);
                }
                Tensor sq = diff::sum_of_squares(diff::sub(pred, target));
                if (!std::isfinite(sq.value())) throw NumericError("non-finite loss");
                total = total.defined() ? diff::add(total, sq) : sq;
                elems += lp.target.data.size();
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " [level " + std::to_string(l) +
                                   ", optimizer step " + std::to_string(ostate.step + 1) + "]");
            }
        }
        Tensor loss = diff::scale(total, 1.0 / static_cast<double>(elems));
        loss_value = loss.value();
        if (!std::isfinite(loss_value))
            throw NumericError("train_step: non-finite loss [optimizer step " +
                               std::to_string(ostate.step + 1) + "]");
        grads = ts.tape.backward(loss);
    }
    if (cfg.lr > 0.0) {
        opt::AdamWConfig ocfg;
        ocfg.lr = cfg.lr;
        ocfg.weight_decay = cfg.weight_decay;
        opt::adamw_step(params.tensors, grads, ocfg, ostate);
    }
    return loss_value;
}

std::vector<EpochStats> train(VelocityParams& params, const std::vector<TaskData>& tasks,
                              const FlowConfig& cfg, opt::AdamWState& ostate,
                              TrainObjective objective, int start_epoch,
                              const EpochCallback& on_epoch) {
    cfg.validate();
    if (tasks.empty()) throw ContractError("train: no tasks");
    for (const auto& td : tasks) td.validate();

    std::vector<EpochStats> history;
    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        Rng erng(cfg.seed ^ static_cast<uint64_t>(epoch));
        // Per-task shuffled batch lists, then round-robin across tasks.
        std::vector<std::vector<std::vector<int>>> task_batches;
        size_t max_batches = 0;
        for (const auto& td : tasks) {
            std::vector<int> perm = erng.permutation(td.num_samples());
            std::vector<std::vector<int>> batches;
            for (size_t off = 0; off < perm.size(); off += cfg.batch_size) {
                const size_t end = std::min(perm.size(), off + cfg.batch_size);
                batches.emplace_back(perm.begin() + off, perm.begin() + end);
            }
            max_batches = std::max(max_batches, batches.size());
            task_batches.push_back(std::move(batches));
        }
        std::vector<double> loss_sum(tasks.size(), 0.0);
        std::vector<int64_t> sample_count(tasks.size(), 0);
        for (size_t b = 0; b < max_batches; ++b)
            for (size_t ti = 0; ti < tasks.size(); ++ti) {
                if (b >= task_batches[ti].size()) continue;
                const auto& rows = task_batches[ti][b];
                TrainBatch tb = tasks[ti].gather(rows);
                const double loss =
                    train_step(params, tb, tasks[ti].spec, cfg, ostate, erng, objective);
                loss_sum[ti] += loss * static_cast<double>(rows.size());
                sample_count[ti] += static_cast<int64_t>(rows.size());
            }
        for (size_t ti = 0; ti < tasks.size(); ++ti) {
            EpochStats st;
            st.epoch = epoch;
            st.task_id = tasks[ti].spec.task_id;
            st.mean_loss = loss_sum[ti] / static_cast<double>(sample_count[ti]);
            history.push_back(st);
        }
        if (on_epoch) on_epoch(epoch, params, ostate);
    }
    return history;
}

MultiScaleTokens euler_integrate_fn(const VelocityFn& field, const MultiScaleTokens& anchors,
                                    int N, TrajectoryDump* dump) {
    if (N < 1) throw ContractError("euler_integrate: N must be >= 1");
    if (anchors.per_level.empty()) throw ContractError("euler_integrate: no levels");
    MultiScaleTokens state;
    for (const auto& rb : anchors.per_level) {
        RepBatch copy;
        copy.level = rb.level;
        copy.grid_side = rb.grid_side;
        copy.data = rb.data.clone();
        state.per_level.push_back(std::move(copy));
    }
    auto snapshot = [&]() {
        if (!dump) return;
        const int B = state.per_level[0].data.shape()[0];
        int64_t width = 0;
        for (const auto& rb : state.per_level) width += rb.data.size() / B;
        std::vector<double> flat(static_cast<size_t>(B) * width);
        int64_t off = 0;
        for (const auto& rb : state.per_level) {
            const int64_t row = rb.data.size() / B;
            for (int b = 0; b < B; ++b)
                std::copy_n(rb.data.data().data() + b * row, row,
                            flat.data() + b * width + off);
            off += row;
        }
        dump->snapshots.push_back(Tensor::from({B, static_cast<int>(width)}, std::move(flat)));
    };
    if (dump) {
        dump->snapshots.clear();
        dump->steps = N;
    }
    snapshot();
    const double invN = 1.0 / static_cast<double>(N);
    for (int n = 0; n < N; ++n) {
        const double tau = static_cast<double>(n) / static_cast<double>(N);
        for (auto& rb : state.per_level) {
            try {
                Tensor v = field(rb.data, tau, rb.level);
                if (v.shape() != rb.data.shape())
                    throw ContractError("euler_integrate: field changed the state shape");
                auto& cur = rb.data.data();
                const auto& vd = v.data();
                std::vector<double> next(cur.size());
                for (size_t i = 0; i < cur.size(); ++i) next[i] = cur[i] + vd[i] * invN;
                rb.data = Tensor::from(rb.data.shape(), std::move(next));
                for (double x : rb.data.data())
                    if (!std::isfinite(x)) throw NumericError("euler_integrate: non-finite state");
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " [integration step " +
                                   std::to_string(n) + "]");
            }
        }
        snapshot();
    }
    return state;
}

MultiScaleTokens euler_integrate(const VelocityParams& params, const MultiScaleTokens& anchors,
                                 const TaskSpec& spec, int N, const diff::Tensor* cond_extra,
                                 TrajectoryDump* dump) {
    if (dump) dump->task_id = spec.task_id;
    return euler_integrate_fn(
        [&](const Tensor& r, double tau, int level) {
            return predict_velocity(params, r, tau, level, spec, cond_extra);
        },
        anchors, N, dump);
}

}  // namespace vb
