#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace uqc::embed {

struct ReduceConfig {
    int n_neighbors = 15;
    double min_dist = 0.1;
    uint64_t seed = 0;
    int n_epochs = 0;  // 0 = auto (500 for M <= 10000, else 200)
};

struct Embedding2D {
    Eigen::MatrixXd points;        // M x 2
    std::vector<std::string> ids;  // aligned with rows
};

struct HdbscanConfig {
    int min_cluster_size = 0;  // 0 = max(5, M/50)
};

struct ClusterLabels {
    std::vector<int> labels;      // noise-resolved, contiguous [0, C)
    std::vector<int> raw_labels;  // -1 marks density noise
    int C = 0;
};

// UMAP: exact kNN, smooth-kNN calibration, fuzzy union, PCA init, negative
// sampling layout. Deterministic for a fixed seed and equivariant under input
// row permutation (rows are canonicalized internally). ids, when given, are
// carried through aligned with rows.
Embedding2D reduce(const Eigen::MatrixXd& latents, const ReduceConfig& cfg,
                   std::vector<std::string> ids = {});

// HDBSCAN on points of any dimension: mutual-reachability MST, condensed
// tree, excess-of-mass selection (root excluded; falls back to one
// all-points cluster when no split survives). Noise then resolves to the
// label of the nearest non-noise point.
ClusterLabels hdbscan(const Eigen::MatrixXd& points, int min_cluster_size = 0);

ClusterLabels assign_labels(const Embedding2D& embedding, const HdbscanConfig& cfg = {});

// Optimal injective cluster -> class assignment (Hungarian on the
// contingency table); entry c is the class id for cluster c, -1 if unmatched.
std::vector<int> map_clusters_to_classes(const ClusterLabels& pred, const std::vector<int>& truth);

// PCA projection to `dims` columns (deterministic sign convention).
Eigen::MatrixXd pca(const Eigen::MatrixXd& x, int dims);

// Exact t-SNE, used by the comparison harness only.
Eigen::MatrixXd tsne(const Eigen::MatrixXd& x, uint64_t seed, double perplexity = 30.0,
                     int iters = 500);

// Scatter plot; writes out_base + ".png" and ".svg" (a known image extension
// on out_base is stripped first). Adds a side-by-side truth panel when truth
// is given. Returns the PNG path.
std::string plot_clusters(const Embedding2D& embedding, const ClusterLabels& labels,
                          const std::vector<int>* truth, const std::string& out_base);

// Fits the low-dimensional kernel (1 + a d^(2b))^-1 for a min_dist/spread
// pair (exposed for tests; min_dist 0.1 gives a~1.58, b~0.90).
std::pair<double, double> fit_ab(double min_dist, double spread = 1.0);

}  // namespace uqc::embed
