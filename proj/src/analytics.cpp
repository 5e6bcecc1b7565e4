#include "visbridge/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "visbridge/common.hpp"

namespace vb {

using diff::Tensor;

SimilarityResult latent_similarity(const RepBatch& gen, const RepBatch& target, bool pooled) {
    if (gen.data.shape() != target.data.shape())
        throw ContractError("latent_similarity: shapes differ");
    const int B = gen.data.shape()[0];
    const int P = gen.data.shape()[1];
    const int D = gen.data.shape()[2];
    const int W = pooled ? D : P * D;

    auto sample = [&](const Tensor& t, int i, std::vector<double>& buf) {
        const double* p = t.data().data() + static_cast<size_t>(i) * P * D;
        if (!pooled) {
            buf.assign(p, p + static_cast<size_t>(P) * D);
            return;
        }
        buf.assign(static_cast<size_t>(D), 0.0);
        for (int tok = 0; tok < P; ++tok)
            for (int d = 0; d < D; ++d) buf[static_cast<size_t>(d)] += p[tok * D + d];
        for (double& v : buf) v /= P;
    };

    SimilarityResult res;
    double acc = 0.0;
    int used = 0;
    std::vector<double> a, b;
    for (int i = 0; i < B; ++i) {
        sample(gen.data, i, a);
        sample(target.data, i, b);
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (int j = 0; j < W; ++j) {
            dot += a[static_cast<size_t>(j)] * b[static_cast<size_t>(j)];
            na += a[static_cast<size_t>(j)] * a[static_cast<size_t>(j)];
            nb += b[static_cast<size_t>(j)] * b[static_cast<size_t>(j)];
        }
        if (na == 0.0 || nb == 0.0) {
            ++res.excluded;
            continue;
        }
        acc += dot / (std::sqrt(na) * std::sqrt(nb));
        ++used;
    }
    if (used == 0) throw ContractError("latent_similarity: every sample had zero norm");
    res.mean = acc / used;
    return res;
}

double latent_variance(const RepBatch& batch) {
    const int B = batch.data.shape()[0];
    if (B < 2) throw ContractError("latent_variance: need at least two samples");
    const int W = batch.data.shape()[1] * batch.data.shape()[2];
    const std::vector<double>& v = batch.data.data();
    double acc = 0.0;
    for (int d = 0; d < W; ++d) {
        double mean = 0.0;
        for (int i = 0; i < B; ++i) mean += v[static_cast<size_t>(i) * W + d];
        mean /= B;
        double var = 0.0;
        for (int i = 0; i < B; ++i) {
            const double dv = v[static_cast<size_t>(i) * W + d] - mean;
            var += dv * dv;
        }
        acc += std::sqrt(var / B);
    }
    return acc / W;
}

namespace {

// Cyclic Jacobi on a symmetric matrix; a is overwritten with the
// diagonalized form, evec's columns hold the eigenvectors.
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& evec) {
    evec.assign(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) evec[static_cast<size_t>(i) * n + i] = 1.0;
    auto at = [&](int r, int c) -> double& { return a[static_cast<size_t>(r) * n + c]; };
    auto vt = [&](int r, int c) -> double& { return evec[static_cast<size_t>(r) * n + c]; };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += at(p, q) * at(p, q);
        if (off < 1e-26) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (apq == 0.0) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = at(k, p), akq = at(k, q);
                    at(k, p) = c * akp - s * akq;
                    at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = at(p, k), aqk = at(q, k);
                    at(p, k) = c * apk - s * aqk;
                    at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = vt(k, p), vkq = vt(k, q);
                    vt(k, p) = c * vkp - s * vkq;
                    vt(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
}

std::vector<double> batch_mean_row(const double* data, int B, int W) {
    std::vector<double> row(static_cast<size_t>(W), 0.0);
    for (int i = 0; i < B; ++i)
        for (int d = 0; d < W; ++d) row[static_cast<size_t>(d)] += data[static_cast<size_t>(i) * W + d];
    for (double& v : row) v /= B;
    return row;
}

}  // namespace

PcaTrajectory pca_trajectory(const TrajectoryDump& dump, const RepBatch& target) {
    if (dump.snapshots.size() < 3)
        throw ContractError("pca_trajectory: need at least three snapshots");
    const int W = dump.snapshots[0].shape()[1];
    if (target.data.rank() != 3 || target.data.shape()[1] * target.data.shape()[2] != W)
        throw ContractError("pca_trajectory: target width differs from snapshots");

    const int M = static_cast<int>(dump.snapshots.size()) + 1;
    std::vector<std::vector<double>> rows;
    rows.reserve(static_cast<size_t>(M));
    for (const Tensor& snap : dump.snapshots)
        rows.push_back(batch_mean_row(snap.data().data(), snap.shape()[0], W));
    rows.push_back(batch_mean_row(target.data.data().data(), target.data.shape()[0], W));

    std::vector<double> center(static_cast<size_t>(W), 0.0);
    for (const auto& r : rows)
        for (int d = 0; d < W; ++d) center[static_cast<size_t>(d)] += r[static_cast<size_t>(d)];
    for (double& v : center) v /= M;
    for (auto& r : rows)
        for (int d = 0; d < W; ++d) r[static_cast<size_t>(d)] -= center[static_cast<size_t>(d)];

    // The row count is small, so diagonalize the M x M Gram matrix
    // instead of the W x W covariance; same spectrum, same projections.
    std::vector<double> gram(static_cast<size_t>(M) * M, 0.0);
    for (int i = 0; i < M; ++i)
        for (int j = i; j < M; ++j) {
            double dot = 0.0;
            for (int d = 0; d < W; ++d)
                dot += rows[static_cast<size_t>(i)][static_cast<size_t>(d)] *
                       rows[static_cast<size_t>(j)][static_cast<size_t>(d)];
            gram[static_cast<size_t>(i) * M + j] = dot;
            gram[static_cast<size_t>(j) * M + i] = dot;
        }
    std::vector<double> evec;
    jacobi_eigen(gram, M, evec);

    std::vector<std::pair<double, int>> order(static_cast<size_t>(M));
    for (int i = 0; i < M; ++i)
        order[static_cast<size_t>(i)] = {gram[static_cast<size_t>(i) * M + i], i};
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
    });

    PcaTrajectory out;
    const double lam1 = std::max(order[0].first, 0.0);
    const double lam2 = M >= 2 ? std::max(order[1].first, 0.0) : 0.0;
    out.rank_deficient = lam2 <= lam1 * 1e-12;
    out.component_var[0] = lam1 / M;
    out.component_var[1] = out.rank_deficient ? 0.0 : lam2 / M;

    // Unit loading vectors v_j = X^T u_j / sqrt(lambda_j), with the
    // largest-magnitude loading made positive.
    std::vector<std::vector<double>> comp(2, std::vector<double>(static_cast<size_t>(W), 0.0));
    const int n_comp = out.rank_deficient ? 1 : 2;
    for (int j = 0; j < n_comp; ++j) {
        const int col = order[static_cast<size_t>(j)].second;
        const double lam = order[static_cast<size_t>(j)].first;
        if (lam <= 0.0) {
            out.rank_deficient = true;
            break;
        }
        const double inv = 1.0 / std::sqrt(lam);
        auto& v = comp[static_cast<size_t>(j)];
        for (int i = 0; i < M; ++i) {
            const double u = evec[static_cast<size_t>(i) * M + col] * inv;
            for (int d = 0; d < W; ++d) v[static_cast<size_t>(d)] += u * rows[static_cast<size_t>(i)][static_cast<size_t>(d)];
        }
        int arg = 0;
        for (int d = 1; d < W; ++d)
            if (std::abs(v[static_cast<size_t>(d)]) > std::abs(v[static_cast<size_t>(arg)])) arg = d;
        if (v[static_cast<size_t>(arg)] < 0.0)
            for (double& x : v) x = -x;
    }

    auto project = [&](const std::vector<double>& r) {
        PcaPoint p;
        for (int d = 0; d < W; ++d) {
            p.pc1 += r[static_cast<size_t>(d)] * comp[0][static_cast<size_t>(d)];
            p.pc2 += r[static_cast<size_t>(d)] * comp[1][static_cast<size_t>(d)];
        }
        return p;
    };
    for (int i = 0; i + 1 < M; ++i) out.steps.push_back(project(rows[static_cast<size_t>(i)]));
    out.target = project(rows[static_cast<size_t>(M - 1)]);
    return out;
}

namespace {

void write_text_file(const std::string& path, const std::string& text) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot write " + path);
    const size_t n = std::fwrite(text.data(), 1, text.size(), f);
    const bool short_write = n != text.size();
    if (std::fclose(f) != 0 || short_write) throw IoError("cannot write " + path);
}

std::string svg_header(int w, int h) {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"";
    s += std::to_string(w);
    s += "\" height=\"";
    s += std::to_string(h);
    s += "\" viewBox=\"0 0 " + std::to_string(w) + " " + std::to_string(h) + "\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    return s;
}

std::string metrics_svg(const std::vector<VariantAnalytics>& metrics) {
    const int n = static_cast<int>(metrics.size());
    const int width = 120 + n * 110, height = 400;
    const double plot_top = 40, plot_bot = 340;
    double max_std = 0.0;
    for (const auto& m : metrics) max_std = std::max(max_std, m.mean_std);
    if (max_std <= 0.0) max_std = 1.0;

    std::string s = svg_header(width, height);
    s += "<line x1=\"60\" y1=\"340\" x2=\"" + std::to_string(width - 20) +
         "\" y2=\"340\" stroke=\"black\"/>\n";
    for (int i = 0; i < n; ++i) {
        const auto& m = metrics[static_cast<size_t>(i)];
        const double x0 = 80 + i * 110;
        const double bar_h = (plot_bot - plot_top) * (m.mean_std / max_std);
        // cosine in [-1, 1] mapped onto the same plot band
        const double cy = plot_bot - (plot_bot - plot_top) * ((m.cosine_sim + 1.0) / 2.0);
        s += "<rect x=\"" + format_number(x0) + "\" y=\"" + format_number(plot_bot - bar_h) +
             "\" width=\"40\" height=\"" + format_number(bar_h) +
             "\" fill=\"steelblue\"/>\n";
        s += "<circle cx=\"" + format_number(x0 + 60) + "\" cy=\"" + format_number(cy) +
             "\" r=\"5\" fill=\"firebrick\"/>\n";
        s += "<text x=\"" + format_number(x0) + "\" y=\"365\" font-size=\"12\">" + m.variant +
             "</text>\n";
        s += "<text x=\"" + format_number(x0) + "\" y=\"382\" font-size=\"10\">sim " +
             format_number(m.cosine_sim) + " std " + format_number(m.mean_std) + "</text>\n";
    }
    s += "<text x=\"60\" y=\"24\" font-size=\"12\">bar: mean per-dimension std, point: cosine "
         "similarity</text>\n";
    s += "</svg>\n";
    return s;
}

std::string trajectory_svg(const PcaTrajectory& t) {
    const int width = 640, height = 480;
    const double margin = 50;
    double lo1 = t.target.pc1, hi1 = t.target.pc1, lo2 = t.target.pc2, hi2 = t.target.pc2;
    for (const auto& p : t.steps) {
        lo1 = std::min(lo1, p.pc1);
        hi1 = std::max(hi1, p.pc1);
        lo2 = std::min(lo2, p.pc2);
        hi2 = std::max(hi2, p.pc2);
    }
    double span1 = hi1 - lo1, span2 = hi2 - lo2;
    if (span1 <= 0) span1 = 1.0;
    if (span2 <= 0) span2 = 1.0;
    lo1 -= span1 * 0.05;
    span1 *= 1.1;
    lo2 -= span2 * 0.05;
    span2 *= 1.1;
    auto sx = [&](double v) { return margin + (v - lo1) / span1 * (width - 2 * margin); };
    auto sy = [&](double v) { return height - margin - (v - lo2) / span2 * (height - 2 * margin); };

    std::string s = svg_header(width, height);
    s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < t.steps.size(); ++i) {
        if (i) s += ' ';
        s += format_number(sx(t.steps[i].pc1)) + "," + format_number(sy(t.steps[i].pc2));
    }
    s += "\"/>\n";
    for (size_t i = 0; i < t.steps.size(); ++i)
        s += "<circle cx=\"" + format_number(sx(t.steps[i].pc1)) + "\" cy=\"" +
             format_number(sy(t.steps[i].pc2)) + "\" r=\"3\" fill=\"steelblue\"/>\n";
    s += "<circle cx=\"" + format_number(sx(t.target.pc1)) + "\" cy=\"" +
         format_number(sy(t.target.pc2)) + "\" r=\"6\" fill=\"none\" stroke=\"firebrick\" "
         "stroke-width=\"2\"/>\n";
    s += "<text x=\"50\" y=\"24\" font-size=\"12\">feature evolution, pc1 vs pc2; circle marks "
         "the target</text>\n";
    if (t.rank_deficient)
        s += "<text x=\"50\" y=\"40\" font-size=\"12\">rank-deficient: pc2 degenerate</text>\n";
    s += "</svg>\n";
    return s;
}

}  // namespace

void emit_plots(const std::vector<VariantAnalytics>& metrics,
                const std::vector<std::pair<std::string, PcaTrajectory>>& trajectories,
                const std::string& out_dir) {
    std::string csv = "# std convention: population (divide by B)\n";
    csv += "variant,cosine_sim,mean_std\n";
    for (const auto& m : metrics)
        csv += m.variant + "," + format_number(m.cosine_sim) + "," + format_number(m.mean_std) +
               "\n";
    write_text_file(out_dir + "/similarity_variance.csv", csv);
    if (!metrics.empty())
        write_text_file(out_dir + "/similarity_variance.svg", metrics_svg(metrics));

    for (const auto& [name, traj] : trajectories) {
        std::string tc = "step,pc1,pc2,is_target\n";
        for (size_t i = 0; i < traj.steps.size(); ++i)
            tc += std::to_string(i) + "," + format_number(traj.steps[i].pc1) + "," +
                  format_number(traj.steps[i].pc2) + ",0\n";
        tc += std::to_string(traj.steps.empty() ? 0 : traj.steps.size() - 1) + "," +
              format_number(traj.target.pc1) + "," + format_number(traj.target.pc2) + ",1\n";
        write_text_file(out_dir + "/" + name + ".csv", tc);
        write_text_file(out_dir + "/" + name + ".svg", trajectory_svg(traj));
    }
}

}  // namespace vb
