#include <cfloat>
#include <cmath>
#include <cstring>

#include "doctest.h"
#include "test_util.hpp"
#include "visbridge/flow.hpp"
#include "visbridge/ops.hpp"

using namespace vb;
using diff::Tensor;

namespace {

RepBatch make_batch(int B, int side, int D, uint64_t seed) {
    Rng rng(seed);
    RepBatch rb;
    rb.grid_side = side;
    rb.data = Tensor::randn({B, side * side, D}, rng);
    return rb;
}

ArchDescriptor tiny_arch(int D = 4) {
    ArchDescriptor a;
    a.n_blocks = 1;
    a.d_model = 8;
    a.n_heads = 2;
    a.channels = D;
    a.task_embed_dim = 4;
    a.cond_dim = 8;
    return a;
}

TaskSpec tiny_spec(const ArchDescriptor& a) {
    TaskSpec s;
    s.num_tasks = a.num_tasks;
    s.embed_dim = a.task_embed_dim;
    return s;
}

TaskData make_task(const ArchDescriptor& a, int n, int side, uint64_t seed,
                   bool degenerate = false) {
    Rng rng(seed);
    TaskData td;
    td.spec = tiny_spec(a);
    td.level_factors = {1};
    td.grid_sides = {side};
    td.source_levels.push_back(Tensor::randn({n, side * side, a.channels}, rng));
    td.target_levels.push_back(degenerate ? td.source_levels[0].clone()
                                          : Tensor::randn({n, side * side, a.channels}, rng));
    return td;
}

}  // namespace

TEST_CASE("pooling keeps level 0 verbatim and averages blocks above it") {
    // 4x4 grid holding 1..16: 2x2 block means are 3.5, 5.5, 11.5, 13.5
    // and the global mean is 8.5.
    std::vector<double> vals(16);
    for (int i = 0; i < 16; ++i) vals[static_cast<size_t>(i)] = i + 1.0;
    RepBatch rb;
    rb.grid_side = 4;
    rb.data = Tensor::from({1, 16, 1}, std::move(vals));
    MultiScaleTokens ms = multiscale_sample(rb, {1, 2, 4});
    REQUIRE(ms.per_level.size() == 3);
    CHECK(ms.per_level[0].grid_side == 4);
    for (int i = 0; i < 16; ++i)
        CHECK(ms.per_level[0].data.data()[static_cast<size_t>(i)] == i + 1.0);
    CHECK(ms.per_level[1].grid_side == 2);
    CHECK(ms.per_level[1].level == 1);
    const std::vector<double> want = {3.5, 5.5, 11.5, 13.5};
    for (int i = 0; i < 4; ++i)
        CHECK(ms.per_level[1].data.data()[static_cast<size_t>(i)] ==
              doctest::Approx(want[static_cast<size_t>(i)]).epsilon(1e-12));
    CHECK(ms.per_level[2].grid_side == 1);
    CHECK(ms.per_level[2].data.data()[0] == doctest::Approx(8.5).epsilon(1e-12));
}

TEST_CASE("pooling factors are validated") {
    RepBatch rb = make_batch(1, 4, 2, 7);
    CHECK_THROWS_AS(multiscale_sample(rb, {}), ContractError);
    CHECK_THROWS_AS(multiscale_sample(rb, {2, 4}), ContractError);
    CHECK_THROWS_AS(multiscale_sample(rb, {1, 3}), ContractError);
    CHECK_NOTHROW(multiscale_sample(rb, {1, 2, 4}));
}

TEST_CASE("interpolation is exact at the endpoints and linear between") {
    DtypeScope scope(Dtype::f64);
    RepBatch r0 = make_batch(2, 2, 3, 11);
    RepBatch rt = make_batch(2, 2, 3, 12);
    RepBatch at0 = interpolate(r0, rt, 0, 10);
    RepBatch atK = interpolate(r0, rt, 10, 10);
    for (size_t i = 0; i < r0.data.data().size(); ++i) {
        CHECK(at0.data.data()[i] == r0.data.data()[i]);
        CHECK(atK.data.data()[i] == rt.data.data()[i]);
    }
    RepBatch mid = interpolate(r0, rt, 5, 10);
    for (size_t i = 0; i < r0.data.data().size(); ++i)
        CHECK(mid.data.data()[i] ==
              doctest::Approx(0.5 * (r0.data.data()[i] + rt.data.data()[i])).epsilon(1e-12));
}

TEST_CASE("interpolation rejects bad arguments") {
    RepBatch r0 = make_batch(2, 2, 3, 1);
    RepBatch rt = make_batch(2, 2, 4, 2);
    CHECK_THROWS_AS(interpolate(r0, rt, 0, 10), ContractError);
    RepBatch ok = make_batch(2, 2, 3, 3);
    CHECK_THROWS_AS(interpolate(r0, ok, -1, 10), ContractError);
    CHECK_THROWS_AS(interpolate(r0, ok, 11, 10), ContractError);
    CHECK_THROWS_AS(interpolate(r0, ok, 0, 0), ContractError);
}

TEST_CASE("path velocity closes the interpolation identity at every k") {
    // r_k + (1 - k/K) (rt - r0) recovers rt for all k.
    DtypeScope scope(Dtype::f64);
    RepBatch r0 = make_batch(3, 2, 5, 21);
    RepBatch rt = make_batch(3, 2, 5, 22);
    RepBatch v = true_velocity(r0, rt);
    const int K = 16;
    for (int k = 0; k <= K; ++k) {
        RepBatch rk = interpolate(r0, rt, k, K);
        const double rest = 1.0 - static_cast<double>(k) / K;
        for (size_t i = 0; i < rt.data.data().size(); ++i) {
            const double rebuilt = rk.data.data()[i] + rest * v.data.data()[i];
            CHECK(std::fabs(rebuilt - rt.data.data()[i]) < 1e-9);
        }
    }
}

TEST_CASE("a zeroed output head reports the mean squared path velocity") {
    DtypeScope scope(Dtype::f64);
    ArchDescriptor a = tiny_arch();
    VelocityParams p = init_params(a, 9);
    for (auto name : {"out_proj.w", "out_proj.b"})
        for (double& v : p.tensors.at(name).data()) v = 0.0;

    RepBatch src = make_batch(4, 2, a.channels, 31);
    RepBatch tgt = make_batch(4, 2, a.channels, 32);
    double want = 0.0;
    for (size_t i = 0; i < src.data.data().size(); ++i) {
        const double d = tgt.data.data()[i] - src.data.data()[i];
        want += d * d;
    }
    want /= static_cast<double>(src.data.data().size());

    TrainBatch tb;
    LevelPair lp;
    lp.source = src;
    lp.target = tgt;
    tb.levels.push_back(std::move(lp));
    FlowConfig cfg;
    cfg.lr = 0.0;
    cfg.batch_size = 4;
    opt::AdamWState ostate;
    Rng rng(33);
    const double loss = train_step(p, tb, tiny_spec(a), cfg, ostate, rng);
    CHECK(std::fabs(loss - want) < 1e-6);
}

TEST_CASE("a zero learning rate evaluates the loss without touching parameters") {
    ArchDescriptor a = tiny_arch();
    VelocityParams p = init_params(a, 9);
    std::map<std::string, std::vector<double>> before;
    for (auto& [name, t] : p.tensors) before[name] = t.data();

    TrainBatch tb;
    LevelPair lp;
    lp.source = make_batch(4, 2, a.channels, 41);
    lp.target = make_batch(4, 2, a.channels, 42);
    tb.levels.push_back(std::move(lp));
    FlowConfig cfg;
    cfg.lr = 0.0;
    opt::AdamWState ostate;
    Rng rng(43);
    const double loss = train_step(p, tb, tiny_spec(a), cfg, ostate, rng);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
    CHECK(ostate.step == 0);
    for (auto& [name, t] : p.tensors) {
        const auto& prev = before.at(name);
        for (size_t i = 0; i < prev.size(); ++i) CHECK(t.data()[i] == prev[i]);
    }
    FlowConfig neg = cfg;
    neg.lr = -1e-3;
    CHECK_THROWS_AS(train_step(p, tb, tiny_spec(a), neg, ostate, rng), ContractError);
}

TEST_CASE("a zero field leaves the integrator state bitwise at the anchor") {
    RepBatch anchor = make_batch(2, 2, 3, 51);
    MultiScaleTokens anchors;
    anchors.per_level.push_back(anchor);
    auto zero_field = [](const Tensor& r, double, int) { return Tensor::zeros(r.shape()); };
    MultiScaleTokens out = euler_integrate_fn(zero_field, anchors, 5);
    for (size_t i = 0; i < anchor.data.data().size(); ++i)
        CHECK(out.per_level[0].data.data()[i] == anchor.data.data()[i]);
}

TEST_CASE("a constant field transports the anchor onto the target for any step count") {
    RepBatch r0 = make_batch(2, 2, 3, 61);
    RepBatch rt = make_batch(2, 2, 3, 62);
    Tensor v = true_velocity(r0, rt).data;
    auto field = [&](const Tensor&, double, int) { return v.clone(); };
    MultiScaleTokens anchors;
    anchors.per_level.push_back(r0);
    for (int N : {1, 2, 10}) {
        MultiScaleTokens out = euler_integrate_fn(field, anchors, N);
        for (size_t i = 0; i < rt.data.data().size(); ++i)
            CHECK(std::fabs(out.per_level[0].data.data()[i] - rt.data.data()[i]) < 1e-5);
    }
}

TEST_CASE("one integration step is one explicit update") {
    DtypeScope scope(Dtype::f64);
    ArchDescriptor a = tiny_arch();
    VelocityParams p = init_params(a, 71);
    RepBatch anchor = make_batch(2, 2, a.channels, 72);
    MultiScaleTokens anchors;
    anchors.per_level.push_back(anchor);
    TaskSpec spec = tiny_spec(a);
    MultiScaleTokens got = euler_integrate(p, anchors, spec, 1);
    Tensor f = predict_velocity(p, anchor.data, 0.0, 0, spec);
    for (size_t i = 0; i < anchor.data.data().size(); ++i) {
        const double manual = anchor.data.data()[i] + f.data()[i];
        CHECK(std::fabs(got.per_level[0].data.data()[i] - manual) < 1e-12);
    }
}

TEST_CASE("integration records the anchor plus one snapshot per step") {
    RepBatch a0 = make_batch(2, 2, 3, 81);
    RepBatch a1;
    a1.level = 1;
    a1.grid_side = 1;
    Rng rng(82);
    a1.data = Tensor::randn({2, 1, 3}, rng);
    MultiScaleTokens anchors;
    anchors.per_level.push_back(a0);
    anchors.per_level.push_back(a1);
    auto zero_field = [](const Tensor& r, double, int) { return Tensor::zeros(r.shape()); };
    TrajectoryDump dump;
    euler_integrate_fn(zero_field, anchors, 3, &dump);
    CHECK(dump.steps == 3);
    REQUIRE(dump.snapshots.size() == 4);
    const int width = 4 * 3 + 1 * 3;
    REQUIRE(dump.snapshots[0].shape() == std::vector<int>{2, width});
    // First snapshot is the flattened anchors, levels concatenated per sample.
    for (int b = 0; b < 2; ++b) {
        for (int i = 0; i < 12; ++i)
            CHECK(dump.snapshots[0].data()[static_cast<size_t>(b) * width + i] ==
                  a0.data.data()[static_cast<size_t>(b) * 12 + i]);
        for (int i = 0; i < 3; ++i)
            CHECK(dump.snapshots[0].data()[static_cast<size_t>(b) * width + 12 + i] ==
                  a1.data.data()[static_cast<size_t>(b) * 3 + i]);
    }
    // Zero field: every snapshot equals the first.
    for (const auto& snap : dump.snapshots)
        for (size_t i = 0; i < snap.data().size(); ++i)
            CHECK(snap.data()[i] == dump.snapshots[0].data()[i]);
}

TEST_CASE("integration aborts with the step index when the state leaves the finite range") {
    DtypeScope scope(Dtype::f64);
    RepBatch anchor;
    anchor.grid_side = 1;
    anchor.data = Tensor::from({1, 1, 1}, {0.75 * DBL_MAX});
    MultiScaleTokens anchors;
    anchors.per_level.push_back(anchor);
    auto blowup = [](const Tensor& r, double, int) {
        return Tensor::from(r.shape(), std::vector<double>(r.data().size(), 0.75 * DBL_MAX));
    };
    try {
        euler_integrate_fn(blowup, anchors, 1);
        FAIL("expected a numeric error");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("integration step 0") != std::string::npos);
    }
}

TEST_CASE("zero epochs is a no-op with an empty history") {
    ArchDescriptor a = tiny_arch();
    VelocityParams p = init_params(a, 5);
    TaskData td = make_task(a, 8, 2, 91);
    FlowConfig cfg;
    cfg.epochs = 0;
    cfg.batch_size = 4;
    opt::AdamWState ostate;
    auto history = train(p, {td}, cfg, ostate);
    CHECK(history.empty());
    CHECK(ostate.step == 0);
}

TEST_CASE("the same seed reproduces the training run bitwise") {
    ArchDescriptor a = tiny_arch();
    TaskData td = make_task(a, 16, 2, 101);
    FlowConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    cfg.K = 8;
    cfg.lr = 1e-2;
    cfg.seed = 7;

    auto run = [&]() {
        VelocityParams p = init_params(a, 5);
        opt::AdamWState ostate;
        auto hist = train(p, {td}, cfg, ostate);
        return std::pair(std::move(p), std::move(hist));
    };
    auto [p1, h1] = run();
    auto [p2, h2] = run();
    REQUIRE(h1.size() == h2.size());
    for (size_t i = 0; i < h1.size(); ++i) CHECK(h1[i].mean_loss == h2[i].mean_loss);
    for (auto& [name, t] : p1.tensors) {
        const auto& u = p2.tensors.at(name);
        for (size_t i = 0; i < t.data().size(); ++i) CHECK(t.data()[i] == u.data()[i]);
    }
}

TEST_CASE("training drives the loss to zero on a degenerate task") {
    // Target equals source, so the true velocity is identically zero and
    // the field only has to learn to shut its output off.
    ArchDescriptor a = tiny_arch();
    VelocityParams p = init_params(a, 13);
    TaskData td = make_task(a, 8, 2, 111, /*degenerate=*/true);
    FlowConfig cfg;
    cfg.batch_size = 8;
    cfg.K = 8;
    cfg.lr = 5e-3;
    opt::AdamWState ostate;
    Rng rng(112);
    TrainBatch tb = td.gather({0, 1, 2, 3, 4, 5, 6, 7});
    double loss = 0.0;
    for (int step = 0; step < 700; ++step)
        loss = train_step(p, tb, td.spec, cfg, ostate, rng);
    CHECK(loss < 1e-4);
}

TEST_CASE("multiple tasks interleave round-robin inside each epoch") {
    ArchDescriptor a = tiny_arch();
    a.num_tasks = 2;
    VelocityParams p = init_params(a, 5);
    TaskData t0 = make_task(a, 8, 2, 121);
    TaskData t1 = make_task(a, 8, 2, 122);
    t1.spec.task_id = 1;
    FlowConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.K = 8;
    cfg.lr = 1e-3;
    opt::AdamWState ostate;
    auto hist = train(p, {t0, t1}, cfg, ostate);
    REQUIRE(hist.size() == 4);
    CHECK(hist[0].epoch == 0);
    CHECK(hist[0].task_id == 0);
    CHECK(hist[1].epoch == 0);
    CHECK(hist[1].task_id == 1);
    CHECK(hist[2].epoch == 1);
    CHECK(hist[3].epoch == 1);
    for (const auto& st : hist) CHECK(std::isfinite(st.mean_loss));
    // 8 samples per task, batch 4: two optimizer steps per task per
    // epoch, so 2 tasks x 2 batches x 2 epochs.
    CHECK(ostate.step == 8);
}

TEST_CASE("a resumed run retraces the uninterrupted one exactly") {
    ArchDescriptor a = tiny_arch();
    TaskData td = make_task(a, 16, 2, 131);
    FlowConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.K = 8;
    cfg.lr = 1e-2;
    cfg.seed = 3;

    VelocityParams full = init_params(a, 5);
    opt::AdamWState full_state;
    auto full_hist = train(full, {td}, cfg, full_state);

    VelocityParams half = init_params(a, 5);
    opt::AdamWState half_state;
    FlowConfig first = cfg;
    first.epochs = 2;
    auto h1 = train(half, {td}, first, half_state);
    auto h2 = train(half, {td}, cfg, half_state, TrainObjective::velocity, /*start_epoch=*/2);

    REQUIRE(h1.size() + h2.size() == full_hist.size());
    for (size_t i = 0; i < h1.size(); ++i) CHECK(h1[i].mean_loss == full_hist[i].mean_loss);
    for (size_t i = 0; i < h2.size(); ++i)
        CHECK(h2[i].mean_loss == full_hist[h1.size() + i].mean_loss);
    for (auto& [name, t] : full.tensors) {
        const auto& u = half.tensors.at(name);
        for (size_t i = 0; i < t.data().size(); ++i) CHECK(t.data()[i] == u.data()[i]);
    }
    CHECK(full_state.step == half_state.step);
}

TEST_CASE("the direct objective regresses the target in one pass") {
    // With a zeroed output head the direct loss is the mean squared
    // target, not the mean squared velocity.
    DtypeScope scope(Dtype::f64);
    ArchDescriptor a = tiny_arch();
    VelocityParams p = init_params(a, 9);
    for (auto name : {"out_proj.w", "out_proj.b"})
        for (double& v : p.tensors.at(name).data()) v = 0.0;
    RepBatch src = make_batch(4, 2, a.channels, 141);
    RepBatch tgt = make_batch(4, 2, a.channels, 142);
    double want = 0.0;
    for (double v : tgt.data.data()) want += v * v;
    want /= static_cast<double>(tgt.data.data().size());
    TrainBatch tb;
    LevelPair lp;
    lp.source = src;
    lp.target = tgt;
    tb.levels.push_back(std::move(lp));
    FlowConfig cfg;
    cfg.lr = 0.0;
    opt::AdamWState ostate;
    Rng rng(143);
    const double loss = train_step(p, tb, tiny_spec(a), cfg, ostate, rng, TrainObjective::direct);
    CHECK(std::fabs(loss - want) < 1e-6);
}
