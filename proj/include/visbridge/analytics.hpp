#pragma once

#include <string>
#include <utility>
#include <vector>

#include "visbridge/flow.hpp"

namespace vb {

// Mean cosine similarity plus the number of samples that had to be
// dropped because one side was exactly zero.
struct SimilarityResult {
    double mean = 0.0;
    int excluded = 0;
};

// Mean over the batch of per-sample cosine similarity between the two
// representations, flattened per sample (or mean-pooled over tokens
// first when pooled is set). Zero-norm samples are excluded and
// counted instead of poisoning the mean.
SimilarityResult latent_similarity(const RepBatch& gen, const RepBatch& target,
                                   bool pooled = false);

// Mean over feature dimensions of the per-dimension standard deviation
// across samples. Population convention (divide by B). B >= 2.
double latent_variance(const RepBatch& batch);

struct PcaPoint {
    double pc1 = 0.0, pc2 = 0.0;
};

// Top-2 projection of the per-step batch-mean states and the target's
// batch mean, in one shared basis.
struct PcaTrajectory {
    std::vector<PcaPoint> steps;  // one per snapshot, anchor first
    PcaPoint target;
    // Variance captured by each component; second is 0 when the
    // centered data has rank < 2 (rank_deficient set).
    double component_var[2] = {0.0, 0.0};
    bool rank_deficient = false;
};

// Fits PCA on the union of the snapshot means and the target mean.
// Component signs are fixed by making each component's
// largest-magnitude loading positive, so runs are comparable.
PcaTrajectory pca_trajectory(const TrajectoryDump& dump, const RepBatch& target);

// One evaluated model variant's row in the similarity/variance chart.
struct VariantAnalytics {
    std::string variant;
    double cosine_sim = 0.0;
    double mean_std = 0.0;
};

// Writes similarity_variance.csv (+ .svg when non-empty) and one
// <name>.csv/.svg pair per named trajectory into out_dir. The CSVs are
// the source of truth; the SVGs are derived and deterministic.
void emit_plots(const std::vector<VariantAnalytics>& metrics,
                const std::vector<std::pair<std::string, PcaTrajectory>>& trajectories,
                const std::string& out_dir);

}  // namespace vb
