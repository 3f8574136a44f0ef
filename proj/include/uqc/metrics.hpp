#pragma once

#include <optional>
#include <vector>

#include "uqc/image.hpp"

namespace uqc::metrics {

// Cross-tabulation of two labelings. Label values are compressed to dense
// indices in ascending label order; counts(i, j) = |{m : a_m = i-th a label,
// b_m = j-th b label}|.
struct ContingencyTable {
    Eigen::MatrixXi counts;
    std::vector<long long> row_sums;
    std::vector<long long> col_sums;
    long long total = 0;
    std::vector<int> a_labels;  // distinct label values, ascending
    std::vector<int> b_labels;
};

struct MetricBundle {
    double ari = 0.0;
    double ami = 0.0;
    double nmi = 0.0;
    double acc = 0.0;
    std::optional<double> silhouette;
    std::optional<double> ssim;
    std::optional<double> mse;
};

ContingencyTable contingency(const std::vector<int>& a, const std::vector<int>& b);

// Chance-adjusted Rand index via pair counting. Identical partitions -> 1.
// Degenerate case (zero adjustment denominator) -> 1 when the numerator is
// also zero (identical trivial partitions), else 0.
double ari(const std::vector<int>& a, const std::vector<int>& b);

// I(a;b) / sqrt(H(a) H(b)). Both constant -> 1; exactly one constant -> 0.
double nmi(const std::vector<int>& a, const std::vector<int>& b);

// (I - E[I]) / (mean(H(a), H(b)) - E[I]) with the exact hypergeometric
// expected mutual information. Degenerate conventions as nmi.
double ami(const std::vector<int>& a, const std::vector<int>& b);

// Best agreement fraction over one-to-one cluster-to-class assignments
// (Hungarian on the contingency table).
double acc(const std::vector<int>& truth, const std::vector<int>& pred);

// Mean silhouette coefficient (b-a)/max(a,b); singletons contribute 0;
// a == b == 0 contributes 0. Requires >= 2 clusters.
double silhouette(const MatrixXd& points, const std::vector<int>& labels);

// SSIM with an 11x11 Gaussian window (sigma 1.5), valid-region mean,
// C1=(0.01 L)^2, C2=(0.03 L)^2. Images smaller than the window fall back to
// the largest odd window that fits.
double ssim(const Image& x, const Image& y, double dynamic_range = 1.0);

// Mean squared error in 8-bit intensity units: mean((255 (x-y))^2).
double mse(const Image& x, const Image& y);

}  // namespace uqc::metrics
