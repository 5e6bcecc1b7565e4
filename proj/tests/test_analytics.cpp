#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "test_util.hpp"
#include "visbridge/analytics.hpp"
#include "visbridge/ops.hpp"

using namespace vb;
using diff::Tensor;

namespace {

RepBatch batch_of(std::vector<int> shape, std::vector<double> vals) {
    RepBatch rb;
    rb.grid_side = 1;
    rb.data = Tensor::from(std::move(shape), std::move(vals));
    return rb;
}

RepBatch random_batch(int B, int P, int D, uint64_t seed) {
    Rng rng(seed);
    RepBatch rb;
    rb.grid_side = 1;
    rb.data = Tensor::randn({B, P, D}, rng);
    return rb;
}

}  // namespace

TEST_CASE("cosine similarity hits the exact poles and ignores scale") {
    DtypeScope scope(Dtype::f64);
    RepBatch a = random_batch(4, 2, 3, 1);
    SimilarityResult same = latent_similarity(a, a);
    CHECK(same.mean == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(same.excluded == 0);

    RepBatch doubled = a;
    doubled.data = diff::scale(a.data, 2.0);
    CHECK(latent_similarity(a, doubled).mean == doctest::Approx(1.0).epsilon(1e-12));

    RepBatch negated = a;
    negated.data = diff::scale(a.data, -1.0);
    CHECK(latent_similarity(a, negated).mean == doctest::Approx(-1.0).epsilon(1e-12));

    RepBatch x = batch_of({1, 1, 2}, {1.0, 0.0});
    RepBatch y = batch_of({1, 1, 2}, {0.0, 1.0});
    CHECK(latent_similarity(x, y).mean == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("zero-norm samples are excluded and counted, not averaged") {
    RepBatch gen = batch_of({2, 1, 2}, {0.0, 0.0, 3.0, 0.0});
    RepBatch tgt = batch_of({2, 1, 2}, {1.0, 1.0, 5.0, 0.0});
    SimilarityResult res = latent_similarity(gen, tgt);
    CHECK(res.excluded == 1);
    CHECK(res.mean == doctest::Approx(1.0).epsilon(1e-12));

    RepBatch all_zero = batch_of({1, 1, 2}, {0.0, 0.0});
    RepBatch one = batch_of({1, 1, 2}, {1.0, 0.0});
    CHECK_THROWS_AS(latent_similarity(all_zero, one), ContractError);

    RepBatch wrong = random_batch(2, 1, 3, 2);
    CHECK_THROWS_AS(latent_similarity(gen, wrong), ContractError);
}

TEST_CASE("pooled similarity compares token means") {
    // Token-level vectors disagree, but both samples pool to the same
    // direction, so the pooled score is 1 while the flat score is not.
    RepBatch gen = batch_of({1, 2, 2}, {1.0, 0.0, 0.0, 1.0});
    RepBatch tgt = batch_of({1, 2, 2}, {0.0, 1.0, 1.0, 0.0});
    CHECK(latent_similarity(gen, tgt, /*pooled=*/true).mean ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(latent_similarity(gen, tgt).mean < 0.999);
}

TEST_CASE("variance uses the population convention") {
    RepBatch same = batch_of({3, 1, 2}, {4.0, -1.0, 4.0, -1.0, 4.0, -1.0});
    CHECK(latent_variance(same) == doctest::Approx(0.0).epsilon(1e-12));

    // Two samples at 0 and 1 in every dimension: population std is 0.5.
    RepBatch two = batch_of({2, 1, 2}, {0.0, 0.0, 1.0, 1.0});
    CHECK(latent_variance(two) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(latent_variance(batch_of({1, 1, 2}, {1.0, 2.0})), ContractError);
}

TEST_CASE("variance agrees with the direct recomputation") {
    DtypeScope scope(Dtype::f64);
    RepBatch rb = random_batch(7, 3, 4, 5);
    const int B = 7, W = 12;
    const auto& v = rb.data.data();
    double want = 0.0;
    for (int d = 0; d < W; ++d) {
        double mean = 0.0;
        for (int i = 0; i < B; ++i) mean += v[static_cast<size_t>(i) * W + d];
        mean /= B;
        double var = 0.0;
        for (int i = 0; i < B; ++i) {
            const double dv = v[static_cast<size_t>(i) * W + d] - mean;
            var += dv * dv;
        }
        want += std::sqrt(var / B);
    }
    want /= W;
    CHECK(latent_variance(rb) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("projection preserves the geometry the top components span") {
    // With W = 2 the two components span the whole space, so pairwise
    // distances between projected points must equal the distances
    // between the batch-mean rows, and the component variances must sum
    // to the total variance of the centered rows.
    DtypeScope scope(Dtype::f64);
    Rng rng(11);
    TrajectoryDump dump;
    dump.steps = 3;
    std::vector<std::vector<double>> mean_rows;
    for (int s = 0; s < 4; ++s) {
        Tensor snap = Tensor::randn({2, 2}, rng);
        mean_rows.push_back({0.5 * (snap.data()[0] + snap.data()[2]),
                             0.5 * (snap.data()[1] + snap.data()[3])});
        dump.snapshots.push_back(std::move(snap));
    }
    RepBatch target = random_batch(2, 1, 2, 12);
    mean_rows.push_back({0.5 * (target.data.data()[0] + target.data.data()[2]),
                         0.5 * (target.data.data()[1] + target.data.data()[3])});

    PcaTrajectory traj = pca_trajectory(dump, target);
    REQUIRE(traj.steps.size() == 4);
    std::vector<PcaPoint> pts = traj.steps;
    pts.push_back(traj.target);
    for (size_t i = 0; i < pts.size(); ++i)
        for (size_t j = i + 1; j < pts.size(); ++j) {
            const double dp = std::hypot(pts[i].pc1 - pts[j].pc1, pts[i].pc2 - pts[j].pc2);
            const double dr = std::hypot(mean_rows[i][0] - mean_rows[j][0],
                                         mean_rows[i][1] - mean_rows[j][1]);
            CHECK(dp == doctest::Approx(dr).epsilon(1e-9));
        }

    double cx = 0, cy = 0;
    for (const auto& r : mean_rows) {
        cx += r[0];
        cy += r[1];
    }
    cx /= 5;
    cy /= 5;
    double total = 0;
    for (const auto& r : mean_rows)
        total += (r[0] - cx) * (r[0] - cx) + (r[1] - cy) * (r[1] - cy);
    total /= 5;
    CHECK(traj.component_var[0] + traj.component_var[1] == doctest::Approx(total).epsilon(1e-9));
    CHECK(traj.component_var[0] >= traj.component_var[1]);
}

TEST_CASE("collinear paths are flagged rank-deficient with a dead second axis") {
    DtypeScope scope(Dtype::f64);
    TrajectoryDump dump;
    dump.steps = 3;
    for (int s = 0; s < 4; ++s) {
        const double t = s;
        dump.snapshots.push_back(Tensor::from({1, 3}, {t, 2 * t, -t}));
    }
    RepBatch target = batch_of({1, 1, 3}, {4.0, 8.0, -4.0});
    PcaTrajectory traj = pca_trajectory(dump, target);
    CHECK(traj.rank_deficient);
    CHECK(traj.component_var[1] == 0.0);
    for (const auto& p : traj.steps) CHECK(p.pc2 == 0.0);
    CHECK(traj.target.pc2 == 0.0);
    // 1-D spacing survives the projection.
    for (size_t i = 1; i < traj.steps.size(); ++i) {
        const double d = std::fabs(traj.steps[i].pc1 - traj.steps[i - 1].pc1);
        CHECK(d == doctest::Approx(std::sqrt(6.0)).epsilon(1e-9));
    }
}

TEST_CASE("the oracle-driven path lands on the target's projection") {
    DtypeScope scope(Dtype::f64);
    RepBatch r0 = random_batch(3, 2, 3, 21);
    RepBatch rt = random_batch(3, 2, 3, 22);
    Tensor v = true_velocity(r0, rt).data;
    auto field = [&](const Tensor&, double, int) { return v.clone(); };
    MultiScaleTokens anchors;
    anchors.per_level.push_back(r0);
    TrajectoryDump dump;
    euler_integrate_fn(field, anchors, 4, &dump);
    PcaTrajectory traj = pca_trajectory(dump, rt);
    const PcaPoint last = traj.steps.back();
    CHECK(std::fabs(last.pc1 - traj.target.pc1) < 1e-9);
    CHECK(std::fabs(last.pc2 - traj.target.pc2) < 1e-9);
}

TEST_CASE("trajectory inputs are validated") {
    TrajectoryDump dump;
    dump.snapshots.push_back(Tensor::zeros({1, 4}));
    dump.snapshots.push_back(Tensor::zeros({1, 4}));
    RepBatch target = batch_of({1, 2, 2}, {0, 0, 0, 0});
    CHECK_THROWS_AS(pca_trajectory(dump, target), ContractError);
    dump.snapshots.push_back(Tensor::zeros({1, 4}));
    RepBatch wrong = batch_of({1, 1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(pca_trajectory(dump, wrong), ContractError);
}

TEST_CASE("plot emission is deterministic and skips empty charts") {
    const std::string empty_dir = vbtest::temp_dir("plots_empty");
    emit_plots({}, {}, empty_dir);
    const std::string csv = vbtest::read_file(empty_dir + "/similarity_variance.csv");
    CHECK(csv.find("variant,cosine_sim,mean_std") != std::string::npos);
    CHECK(!std::filesystem::exists(empty_dir + "/similarity_variance.svg"));

    std::vector<VariantAnalytics> metrics = {{"flow_n10", 0.97, 0.4}, {"osd", 0.91, 0.2}};
    DtypeScope scope(Dtype::f64);
    TrajectoryDump dump;
    dump.steps = 3;
    Rng rng(31);
    for (int s = 0; s < 4; ++s) dump.snapshots.push_back(Tensor::randn({2, 4}, rng));
    RepBatch target = random_batch(2, 2, 2, 32);
    PcaTrajectory traj = pca_trajectory(dump, target);

    const std::string d1 = vbtest::temp_dir("plots_a");
    const std::string d2 = vbtest::temp_dir("plots_b");
    emit_plots(metrics, {{"traj_task0", traj}}, d1);
    emit_plots(metrics, {{"traj_task0", traj}}, d2);
    for (auto name : {"similarity_variance.csv", "similarity_variance.svg", "traj_task0.csv",
                      "traj_task0.svg"}) {
        const std::string b1 = vbtest::read_file(d1 + "/" + name);
        const std::string b2 = vbtest::read_file(d2 + "/" + name);
        CHECK(!b1.empty());
        CHECK(b1 == b2);
    }
    const std::string tcsv = vbtest::read_file(d1 + "/traj_task0.csv");
    CHECK(tcsv.find("step,pc1,pc2,is_target") != std::string::npos);
    CHECK(tcsv.find(",1\n") != std::string::npos);
}
