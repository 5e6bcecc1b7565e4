#include "visbridge/ops.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace vb::diff {

namespace {

using detail::NodePtr;

// Row-major kernel: C[m,n] += A[m,k]·B[k,n]. Four output rows share
// each streamed row of B. The per-element accumulation order over k is
// fixed, so results are deterministic.
void gemm_nn(const double* a, const double* b, double* c, int m, int n, int k) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = c + static_cast<size_t>(i) * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        const double* a0 = a + static_cast<size_t>(i) * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        for (int kk = 0; kk < k; ++kk) {
            const double v0 = a0[kk], v1 = a1[kk], v2 = a2[kk], v3 = a3[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) {
                const double bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += op(A)·op(B); op transposes when the flag is set. A is
// [m,k] ([k,m] when ta), B is [k,n] ([n,k] when tb). Transposed
// operands are packed into scratch so one blocked kernel serves all
// four variants.
void gemm(const double* a, const double* b, double* c, int m, int n, int k, bool ta, bool tb) {
    static thread_local std::vector<double> pack_a, pack_b;
    if (ta) {
        pack_a.resize(static_cast<size_t>(m) * k);
        for (int kk = 0; kk < k; ++kk) {
            const double* src = a + static_cast<size_t>(kk) * m;
            for (int i = 0; i < m; ++i) pack_a[static_cast<size_t>(i) * k + kk] = src[i];
        }
        a = pack_a.data();
    }
    if (tb) {
        pack_b.resize(static_cast<size_t>(k) * n);
        for (int j = 0; j < n; ++j) {
            const double* src = b + static_cast<size_t>(j) * k;
            for (int kk = 0; kk < k; ++kk) pack_b[static_cast<size_t>(kk) * n + j] = src[kk];
        }
        b = pack_b.data();
    }
    gemm_nn(a, b, c, m, n, k);
}

// A sum is non-finite exactly when some element is (or the sum itself
// overflows, an error state regardless), so one striped add per element
// buys the every-op finiteness guarantee without a branchy scan.
void check_finite(const char* name, const std::vector<double>& data) {
    double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    const size_t n = data.size();
    size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += data[i];
        s1 += data[i + 1];
        s2 += data[i + 2];
        s3 += data[i + 3];
    }
    for (; i < n; ++i) s0 += data[i];
    if (!std::isfinite(s0 + s1 + s2 + s3))
        throw NumericError(std::string(name) + ": non-finite output");
}

Tensor finish(const char* name, std::vector<int> shape, std::vector<double> data,
              const std::vector<Tensor>& inputs, BackwardFn fn) {
    apply_dtype(data);
    check_finite(name, data);
    Tensor out = Tensor::from(std::move(shape), std::move(data));
    if (GradTape* tape = GradTape::active()) tape->record(name, inputs, out, std::move(fn));
    return out;
}

void require(bool cond, const char* msg) {
    if (!cond) throw DimensionError(msg);
}

// Right-aligned broadcast plan: per output axis, the element stride into
// a smaller operand (0 where that operand's extent is 1 or missing).
struct BroadcastPlan {
    std::vector<int> out_shape;
    std::vector<int64_t> stride_a, stride_b;
};

BroadcastPlan broadcast_shapes(const std::vector<int>& a, const std::vector<int>& b,
                               const char* opname) {
    const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
    const int r = std::max(ra, rb);
    BroadcastPlan plan;
    plan.out_shape.assign(static_cast<size_t>(r), 1);
    for (int i = 0; i < r; ++i) {
        const int ea = i < r - ra ? 1 : a[static_cast<size_t>(i - (r - ra))];
        const int eb = i < r - rb ? 1 : b[static_cast<size_t>(i - (r - rb))];
        if (ea != eb && ea != 1 && eb != 1)
            throw DimensionError(std::string(opname) + ": shapes do not broadcast");
        plan.out_shape[static_cast<size_t>(i)] = std::max(ea, eb);
    }
    auto strides_for = [&](const std::vector<int>& s) {
        std::vector<int64_t> st(static_cast<size_t>(r), 0);
        int64_t acc = 1;
        const int rs = static_cast<int>(s.size());
        for (int i = r - 1; i >= 0; --i) {
            const int e = i < r - rs ? 1 : s[static_cast<size_t>(i - (r - rs))];
            st[static_cast<size_t>(i)] = e == 1 ? 0 : acc;
            acc *= e;
        }
        return st;
    };
    plan.stride_a = strides_for(a);
    plan.stride_b = strides_for(b);
    return plan;
}

// Walk the output index space in row-major order, yielding the mapped
// flat offsets into both operands.
template <typename F>
void broadcast_walk(const BroadcastPlan& plan, F&& body) {
    const int r = static_cast<int>(plan.out_shape.size());
    std::vector<int> idx(static_cast<size_t>(r), 0);
    int64_t total = 1;
    for (int e : plan.out_shape) total *= e;
    int64_t oa = 0, ob = 0;
    for (int64_t flat = 0; flat < total; ++flat) {
        body(flat, oa, ob);
        for (int ax = r - 1; ax >= 0; --ax) {
            idx[static_cast<size_t>(ax)]++;
            oa += plan.stride_a[static_cast<size_t>(ax)];
            ob += plan.stride_b[static_cast<size_t>(ax)];
            if (idx[static_cast<size_t>(ax)] < plan.out_shape[static_cast<size_t>(ax)]) break;
            oa -= plan.stride_a[static_cast<size_t>(ax)] * plan.out_shape[static_cast<size_t>(ax)];
            ob -= plan.stride_b[static_cast<size_t>(ax)] * plan.out_shape[static_cast<size_t>(ax)];
            idx[static_cast<size_t>(ax)] = 0;
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    require(sa.size() >= 2 && sb.size() >= 2, "matmul: operands must have rank >= 2");
    const int m = sa[sa.size() - 2];
    const int k = sa[sa.size() - 1];
    const int kb = transpose_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
    const int n = transpose_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
    require(k == kb, "matmul: inner extents differ");

    std::vector<int> batch_a(sa.begin(), sa.end() - 2);
    std::vector<int> batch_b(sb.begin(), sb.end() - 2);
    bool bcast_a = false, bcast_b = false;
    std::vector<int> batch;
    if (batch_a == batch_b) {
        batch = batch_a;
    } else if (batch_b.empty()) {
        batch = batch_a;
        bcast_b = true;
    } else if (batch_a.empty()) {
        batch = batch_b;
        bcast_a = true;
    } else {
        throw DimensionError("matmul: batch extents differ");
    }
    int64_t nb = 1;
    for (int e : batch) nb *= e;

    const int64_t asz = static_cast<int64_t>(m) * k;
    const int64_t bsz = static_cast<int64_t>(k) * n;
    const int64_t csz = static_cast<int64_t>(m) * n;
    std::vector<double> out(static_cast<size_t>(nb * csz), 0.0);
    const auto& da = a.data();
    const auto& db = b.data();
    for (int64_t bi = 0; bi < nb; ++bi) {
        gemm(da.data() + (bcast_a ? 0 : bi * asz), db.data() + (bcast_b ? 0 : bi * bsz),
             out.data() + bi * csz, m, n, k, false, transpose_b);
    }

    std::vector<int> out_shape = batch;
    out_shape.push_back(m);
    out_shape.push_back(n);

    NodePtr an = a.node(), bn = b.node();
    const bool tb = transpose_b;
    return finish("matmul", std::move(out_shape), std::move(out), {a, b},
                  [an, bn, m, n, k, nb, asz, bsz, csz, bcast_a, bcast_b,
                   tb](const std::vector<double>& g, GradStore& gs) {
                      if (gs.wants(an)) {
                          auto& ga = gs.acc(an);
                          for (int64_t bi = 0; bi < nb; ++bi)
                              gemm(g.data() + bi * csz, bn->data.data() + (bcast_b ? 0 : bi * bsz),
                                   ga.data() + (bcast_a ? 0 : bi * asz), m, k, n, false, !tb);
                      }
                      if (gs.wants(bn)) {
                          auto& gb = gs.acc(bn);
                          for (int64_t bi = 0; bi < nb; ++bi) {
                              const double* pa = an->data.data() + (bcast_a ? 0 : bi * asz);
                              const double* pg = g.data() + bi * csz;
                              double* pgb = gb.data() + (bcast_b ? 0 : bi * bsz);
                              if (!tb)
                                  gemm(pa, pg, pgb, k, n, m, true, false);
                              else
                                  gemm(pg, pa, pgb, n, k, m, true, false);
                          }
                      }
                  });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "add: shapes differ");
    const auto& da = a.data();
    const auto& db = b.data();
    std::vector<double> out(da.size());
    for (size_t i = 0; i < da.size(); ++i) out[i] = da[i] + db[i];
    NodePtr an = a.node(), bn = b.node();
    return finish("add", a.shape(), std::move(out), {a, b},
                  [an, bn](const std::vector<double>& g, GradStore& gs) {
                      if (gs.wants(an)) {
                          auto& ga = gs.acc(an);
                          for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                      }
                      if (gs.wants(bn)) {
                          auto& gb = gs.acc(bn);
                          for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                      }
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BroadcastPlan plan = broadcast_shapes(a.shape(), b.shape(), "mul");
    int64_t total = 1;
    for (int e : plan.out_shape) total *= e;
    std::vector<double> out(static_cast<size_t>(total));
    const auto& da = a.data();
    const auto& db = b.data();
    broadcast_walk(plan, [&](int64_t flat, int64_t oa, int64_t ob) {
        out[static_cast<size_t>(flat)] =
            da[static_cast<size_t>(oa)] * db[static_cast<size_t>(ob)];
    });
    NodePtr an = a.node(), bn = b.node();
    return finish("mul", plan.out_shape, std::move(out), {a, b},
                  [an, bn, plan](const std::vector<double>& g, GradStore& gs) {
                      const bool wa = gs.wants(an), wb = gs.wants(bn);
                      if (!wa && !wb) return;
                      std::vector<double>* ga = wa ? &gs.acc(an) : nullptr;
                      std::vector<double>* gb = wb ? &gs.acc(bn) : nullptr;
                      broadcast_walk(plan, [&](int64_t flat, int64_t oa, int64_t ob) {
                          const double gv = g[static_cast<size_t>(flat)];
                          if (ga)
                              (*ga)[static_cast<size_t>(oa)] +=
                                  gv * bn->data[static_cast<size_t>(ob)];
                          if (gb)
                              (*gb)[static_cast<size_t>(ob)] +=
                                  gv * an->data[static_cast<size_t>(oa)];
                      });
                  });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    const auto& sx = x.shape();
    require(!sx.empty() && w.rank() == 2 && b.rank() == 1, "affine: bad operand ranks");
    const int in = sx.back();
    require(w.shape()[0] == in, "affine: weight rows must match input channels");
    const int out_dim = w.shape()[1];
    require(b.shape()[0] == out_dim, "affine: bias length must match output channels");
    const int64_t rows = x.size() / in;

    std::vector<double> out(static_cast<size_t>(rows * out_dim));
    const auto& dx = x.data();
    const auto& dw = w.data();
    const auto& dbias = b.data();
    for (int64_t r = 0; r < rows; ++r)
        for (int j = 0; j < out_dim; ++j)
            out[static_cast<size_t>(r * out_dim + j)] = dbias[static_cast<size_t>(j)];
    gemm(dx.data(), dw.data(), out.data(), static_cast<int>(rows), out_dim, in, false, false);

    std::vector<int> out_shape = sx;
    out_shape.back() = out_dim;
    NodePtr xn = x.node(), wn = w.node(), bn = b.node();
    return finish("affine", std::move(out_shape), std::move(out), {x, w, b},
                  [xn, wn, bn, rows, in, out_dim](const std::vector<double>& g, GradStore& gs) {
                      if (gs.wants(xn))
                          gemm(g.data(), wn->data.data(), gs.acc(xn).data(),
                               static_cast<int>(rows), in, out_dim, false, true);
                      if (gs.wants(wn))
                          gemm(xn->data.data(), g.data(), gs.acc(wn).data(), in, out_dim,
                               static_cast<int>(rows), true, false);
                      if (gs.wants(bn)) {
                          auto& gb = gs.acc(bn);
                          for (int64_t r = 0; r < rows; ++r)
                              for (int j = 0; j < out_dim; ++j)
                                  gb[static_cast<size_t>(j)] += g[static_cast<size_t>(r * out_dim + j)];
                      }
                  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    const auto& sx = x.shape();
    require(!sx.empty(), "layer_norm: input must have rank >= 1");
    const int d = sx.back();
    require(gamma.rank() == 1 && gamma.shape()[0] == d, "layer_norm: gamma length mismatch");
    require(beta.rank() == 1 && beta.shape()[0] == d, "layer_norm: beta length mismatch");
    const int64_t rows = x.size() / d;

    const auto& dx = x.data();
    const auto& dg = gamma.data();
    const auto& db = beta.data();
    std::vector<double> out(dx.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = dx.data() + r * d;
        double mu = 0.0;
        for (int i = 0; i < d; ++i) mu += row[i];
        mu /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        double* orow = out.data() + r * d;
        for (int i = 0; i < d; ++i) orow[i] = dg[static_cast<size_t>(i)] * (row[i] - mu) * inv +
                                              db[static_cast<size_t>(i)];
    }

    NodePtr xn = x.node(), gn = gamma.node(), bn = beta.node();
    return finish("layer_norm", sx, std::move(out), {x, gamma, beta},
                  [xn, gn, bn, rows, d](const std::vector<double>& g, GradStore& gs) {
                      const bool wx = gs.wants(xn), wg = gs.wants(gn), wb = gs.wants(bn);
                      if (!wx && !wg && !wb) return;
                      std::vector<double>* gx = wx ? &gs.acc(xn) : nullptr;
                      std::vector<double>* gg = wg ? &gs.acc(gn) : nullptr;
                      std::vector<double>* gb = wb ? &gs.acc(bn) : nullptr;
                      std::vector<double> xhat(static_cast<size_t>(d));
                      for (int64_t r = 0; r < rows; ++r) {
                          const double* row = xn->data.data() + r * d;
                          const double* grow = g.data() + r * d;
                          double mu = 0.0;
                          for (int i = 0; i < d; ++i) mu += row[i];
                          mu /= d;
                          double var = 0.0;
                          for (int i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
                          var /= d;
                          const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
                          for (int i = 0; i < d; ++i) xhat[static_cast<size_t>(i)] = (row[i] - mu) * inv;
                          if (gx) {
                              double m1 = 0.0, m2 = 0.0;
                              for (int i = 0; i < d; ++i) {
                                  const double gy = grow[i] * gn->data[static_cast<size_t>(i)];
                                  m1 += gy;
                                  m2 += gy * xhat[static_cast<size_t>(i)];
                              }
                              m1 /= d;
                              m2 /= d;
                              double* gxr = gx->data() + r * d;
                              for (int i = 0; i < d; ++i) {
                                  const double gy = grow[i] * gn->data[static_cast<size_t>(i)];
                                  gxr[i] += inv * (gy - m1 - xhat[static_cast<size_t>(i)] * m2);
                              }
                          }
                          if (gg)
                              for (int i = 0; i < d; ++i)
                                  (*gg)[static_cast<size_t>(i)] += grow[i] * xhat[static_cast<size_t>(i)];
                          if (gb)
                              for (int i = 0; i < d; ++i) (*gb)[static_cast<size_t>(i)] += grow[i];
                      }
                  });
}

Tensor gelu(const Tensor& x) {
    static const double kInvSqrt2 = 1.0 / std::sqrt(2.0);
    static const double kInvSqrt2Pi = 0.39894228040143267794;
    const auto& dx = x.data();
    std::vector<double> out(dx.size());
    for (size_t i = 0; i < dx.size(); ++i)
        out[i] = 0.5 * dx[i] * (1.0 + std::erf(dx[i] * kInvSqrt2));
    NodePtr xn = x.node();
    return finish("gelu", x.shape(), std::move(out), {x},
                  [xn](const std::vector<double>& g, GradStore& gs) {
                      if (!gs.wants(xn)) return;
                      auto& gx = gs.acc(xn);
                      for (size_t i = 0; i < g.size(); ++i) {
                          const double v = xn->data[i];
                          const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                          const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                          gx[i] += g[i] * (cdf + v * pdf);
                      }
                  });
}

Tensor softmax_over_last_axis(const Tensor& x) {
    const auto& sx = x.shape();
    require(!sx.empty(), "softmax_over_last_axis: input must have rank >= 1");
    const int d = sx.back();
    const int64_t rows = x.size() / d;
    const auto& dx = x.data();
    std::vector<double> out(dx.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = dx.data() + r * d;
        double* orow = out.data() + r * d;
        double mx = row[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, row[i]);
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            orow[i] = std::exp(row[i] - mx);
            s += orow[i];
        }
        for (int i = 0; i < d; ++i) orow[i] /= s;
    }
    apply_dtype(out);
    for (double v : out)
        if (!std::isfinite(v)) throw NumericError("softmax_over_last_axis: non-finite output");
    Tensor result = Tensor::from(sx, std::move(out));
    if (GradTape* tape = GradTape::active()) {
        NodePtr xn = x.node(), yn = result.node();
        tape->record("softmax_over_last_axis", {x}, result,
                     [xn, yn, rows, d](const std::vector<double>& g, GradStore& gs) {
                         if (!gs.wants(xn)) return;
                         auto& gx = gs.acc(xn);
                         for (int64_t r = 0; r < rows; ++r) {
                             const double* y = yn->data.data() + r * d;
                             const double* gr = g.data() + r * d;
                             double dot = 0.0;
                             for (int i = 0; i < d; ++i) dot += gr[i] * y[i];
                             double* gxr = gx.data() + r * d;
                             for (int i = 0; i < d; ++i) gxr[i] += y[i] * (gr[i] - dot);
                         }
                     });
    }
    return result;
}

Tensor mean(const Tensor& x) {
    const auto& dx = x.data();
    double acc = 0.0;
    for (double v : dx) acc += v;
    const double n = static_cast<double>(dx.size());
    NodePtr xn = x.node();
    return finish("mean", {1}, {acc / n}, {x},
                  [xn, n](const std::vector<double>& g, GradStore& gs) {
                      if (!gs.wants(xn)) return;
                      auto& gx = gs.acc(xn);
                      const double gv = g[0] / n;
                      for (double& v : gx) v += gv;
                  });
}

Tensor sum_of_squares(const Tensor& x) {
    const auto& dx = x.data();
    double acc = 0.0;
    for (double v : dx) acc += v * v;
    NodePtr xn = x.node();
    return finish("sum_of_squares", {1}, {acc}, {x},
                  [xn](const std::vector<double>& g, GradStore& gs) {
                      if (!gs.wants(xn)) return;
                      auto& gx = gs.acc(xn);
                      for (size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * xn->data[i] * g[0];
                  });
}

Tensor concat_last_axis(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    require(sa.size() == sb.size() && !sa.empty(), "concat_last_axis: rank mismatch");
    for (size_t i = 0; i + 1 < sa.size(); ++i)
        require(sa[i] == sb[i], "concat_last_axis: leading extents differ");
    const int da = sa.back(), db = sb.back();
    const int64_t rows = a.size() / da;

    std::vector<int> out_shape = sa;
    out_shape.back() = da + db;
    std::vector<double> out(static_cast<size_t>(rows * (da + db)));
    const auto& va = a.data();
    const auto& vb = b.data();
    for (int64_t r = 0; r < rows; ++r) {
        std::memcpy(out.data() + r * (da + db), va.data() + r * da, sizeof(double) * da);
        std::memcpy(out.data() + r * (da + db) + da, vb.data() + r * db, sizeof(double) * db);
    }
    NodePtr an = a.node(), bn = b.node();
    return finish("concat_last_axis", std::move(out_shape), std::move(out), {a, b},
                  [an, bn, rows, da, db](const std::vector<double>& g, GradStore& gs) {
                      if (gs.wants(an)) {
                          auto& ga = gs.acc(an);
                          for (int64_t r = 0; r < rows; ++r)
                              for (int i = 0; i < da; ++i)
                                  ga[static_cast<size_t>(r * da + i)] +=
                                      g[static_cast<size_t>(r * (da + db) + i)];
                      }
                      if (gs.wants(bn)) {
                          auto& gb = gs.acc(bn);
                          for (int64_t r = 0; r < rows; ++r)
                              for (int i = 0; i < db; ++i)
                                  gb[static_cast<size_t>(r * db + i)] +=
                                      g[static_cast<size_t>(r * (da + db) + da + i)];
                      }
                  });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const auto& sx = x.shape();
    if (axis < 0 || axis >= static_cast<int>(sx.size()))
        throw ContractError("slice: axis out of range");
    if (len < 1 || start < 0 || start + len > sx[static_cast<size_t>(axis)])
        throw ContractError("slice: range out of bounds");
    int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= sx[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < sx.size(); ++i) inner *= sx[i];
    const int full = sx[static_cast<size_t>(axis)];

    std::vector<int> out_shape = sx;
    out_shape[static_cast<size_t>(axis)] = len;
    std::vector<double> out(static_cast<size_t>(outer * len * inner));
    const auto& dx = x.data();
    for (int64_t o = 0; o < outer; ++o)
        std::memcpy(out.data() + o * len * inner, dx.data() + (o * full + start) * inner,
                    sizeof(double) * static_cast<size_t>(len * inner));

    NodePtr xn = x.node();
    return finish("slice", std::move(out_shape), std::move(out), {x},
                  [xn, outer, inner, full, start, len](const std::vector<double>& g, GradStore& gs) {
                      if (!gs.wants(xn)) return;
                      auto& gx = gs.acc(xn);
                      for (int64_t o = 0; o < outer; ++o)
                          for (int64_t i = 0; i < len * inner; ++i)
                              gx[static_cast<size_t>((o * full + start) * inner + i)] +=
                                  g[static_cast<size_t>(o * len * inner + i)];
                  });
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
    require(detail::numel(new_shape) == x.size(), "reshape: element count changes");
    NodePtr xn = x.node();
    return finish("reshape", std::move(new_shape), x.data(), {x},
                  [xn](const std::vector<double>& g, GradStore& gs) {
                      if (!gs.wants(xn)) return;
                      auto& gx = gs.acc(xn);
                      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                  });
}

Tensor broadcast_add(const Tensor& x, const Tensor& v) {
    BroadcastPlan plan = broadcast_shapes(x.shape(), v.shape(), "broadcast_add");
    require(plan.out_shape == x.shape(), "broadcast_add: v must broadcast to x's shape");
    std::vector<double> out(x.data().size());
    const auto& dx = x.data();
    const auto& dv = v.data();
    broadcast_walk(plan, [&](int64_t flat, int64_t ox, int64_t ov) {
        out[static_cast<size_t>(flat)] =
            dx[static_cast<size_t>(ox)] + dv[static_cast<size_t>(ov)];
    });
    NodePtr xn = x.node(), vn = v.node();
    return finish("broadcast_add", x.shape(), std::move(out), {x, v},
                  [xn, vn, plan](const std::vector<double>& g, GradStore& gs) {
                      const bool wx = gs.wants(xn), wv = gs.wants(vn);
                      if (!wx && !wv) return;
                      std::vector<double>* gx = wx ? &gs.acc(xn) : nullptr;
                      std::vector<double>* gv = wv ? &gs.acc(vn) : nullptr;
                      broadcast_walk(plan, [&](int64_t flat, int64_t ox, int64_t ov) {
                          const double gvv = g[static_cast<size_t>(flat)];
                          if (gx) (*gx)[static_cast<size_t>(ox)] += gvv;
                          if (gv) (*gv)[static_cast<size_t>(ov)] += gvv;
                      });
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, mul(b, Tensor::scalar(-1.0))); }

Tensor scale(const Tensor& x, double c) { return mul(x, Tensor::scalar(c)); }

Tensor add_scalar(const Tensor& x, double c) { return broadcast_add(x, Tensor::scalar(c)); }

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::mul: return "mul";
        case OpKind::affine: return "affine";
        case OpKind::layer_norm: return "layer_norm";
        case OpKind::gelu: return "gelu";
        case OpKind::softmax_over_last_axis: return "softmax_over_last_axis";
        case OpKind::mean: return "mean";
        case OpKind::sum_of_squares: return "sum_of_squares";
        case OpKind::concat_last_axis: return "concat_last_axis";
        case OpKind::slice: return "slice";
        case OpKind::reshape: return "reshape";
        case OpKind::broadcast_add: return "broadcast_add";
    }
    return "?";
}

std::vector<OpKind> all_op_kinds() {
    return {OpKind::matmul,
            OpKind::add,
            OpKind::mul,
            OpKind::affine,
            OpKind::layer_norm,
            OpKind::gelu,
            OpKind::softmax_over_last_axis,
            OpKind::mean,
            OpKind::sum_of_squares,
            OpKind::concat_last_axis,
            OpKind::slice,
            OpKind::reshape,
            OpKind::broadcast_add};
}

Tensor forward_op(OpKind kind, std::span<const Tensor> in, const OpAttrs& attrs) {
    auto need = [&](size_t n) {
        if (in.size() != n) throw ContractError(std::string(op_name(kind)) + ": wrong input count");
    };
    switch (kind) {
        case OpKind::matmul: need(2); return matmul(in[0], in[1], attrs.transpose_b);
        case OpKind::add: need(2); return add(in[0], in[1]);
        case OpKind::mul: need(2); return mul(in[0], in[1]);
        case OpKind::affine: need(3); return affine(in[0], in[1], in[2]);
        case OpKind::layer_norm: need(3); return layer_norm(in[0], in[1], in[2]);
        case OpKind::gelu: need(1); return gelu(in[0]);
        case OpKind::softmax_over_last_axis: need(1); return softmax_over_last_axis(in[0]);
        case OpKind::mean: need(1); return mean(in[0]);
        case OpKind::sum_of_squares: need(1); return sum_of_squares(in[0]);
        case OpKind::concat_last_axis: need(2); return concat_last_axis(in[0], in[1]);
        case OpKind::slice: need(1); return slice(in[0], attrs.axis, attrs.start, attrs.len);
        case OpKind::reshape: need(1); return reshape(in[0], attrs.shape);
        case OpKind::broadcast_add: need(2); return broadcast_add(in[0], in[1]);
    }
    throw ContractError("forward_op: unknown op kind");
}

}  // namespace vb::diff
