#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "visbridge/common.hpp"
#include "visbridge/tensor.hpp"

namespace vbtest {

// Largest per-element relative error between two gradient buffers.
// Elements where both sides are tiny are compared absolutely so noise
// around zero does not inflate the ratio.
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), 1e-6});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

// Central finite differences of a scalar functional w.r.t. one tensor,
// bumping elements in place. Caller runs this under the f64 dtype.
inline std::vector<double> fd_grad(vb::diff::Tensor& t,
                                   const std::function<double()>& loss_fn,
                                   double h = 1e-4) {
    std::vector<double> g(t.data().size());
    for (size_t i = 0; i < g.size(); ++i) {
        const double saved = t.data()[i];
        t.data()[i] = saved + h;
        const double up = loss_fn();
        t.data()[i] = saved - h;
        const double down = loss_fn();
        t.data()[i] = saved;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

// Fresh scratch directory under the system temp root.
inline std::string temp_dir(const std::string& tag) {
    static int counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("vb_" + tag + "_" + std::to_string(++counter));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace vbtest
