#include "uqc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "uqc/hungarian.hpp"

namespace uqc::metrics {

namespace {

std::vector<int> compress(const std::vector<int>& v, std::vector<int>& values) {
    std::map<int, int> index;
    for (int x : v) index.emplace(x, 0);
    values.clear();
    int next = 0;
    for (auto& [val, idx] : index) {
        idx = next++;
        values.push_back(val);
    }
    std::vector<int> out(v.size());
    for (size_t i = 0; i < v.size(); ++i) out[i] = index[v[i]];
    return out;
}

double comb2(double n) { return n * (n - 1.0) / 2.0; }

double entropy(const std::vector<long long>& counts, long long total) {
    double h = 0.0;
    for (long long c : counts) {
        if (c <= 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(total);
        h -= p * std::log(p);
    }
    return h;
}

double mutual_information(const ContingencyTable& t) {
    const double n = static_cast<double>(t.total);
    double mi = 0.0;
    for (int i = 0; i < t.counts.rows(); ++i) {
        for (int j = 0; j < t.counts.cols(); ++j) {
            const long long nij = t.counts(i, j);
            if (nij == 0) continue;
            const double pij = nij / n;
            mi += pij * std::log(n * nij / (static_cast<double>(t.row_sums[i]) * static_cast<double>(t.col_sums[j])));
        }
    }
    return mi > 0.0 ? mi : 0.0;
}

// Exact hypergeometric expected mutual information (Vinh et al. model).
double expected_mutual_information(const ContingencyTable& t) {
    const long long n = t.total;
    std::vector<double> lfact(static_cast<size_t>(n) + 1, 0.0);
    for (long long i = 1; i <= n; ++i) lfact[i] = lfact[i - 1] + std::log(static_cast<double>(i));
    const double nd = static_cast<double>(n);
    double emi = 0.0;
    for (long long ai : t.row_sums) {
        for (long long bj : t.col_sums) {
            const long long lo = std::max<long long>(1, ai + bj - n);
            const long long hi = std::min(ai, bj);
            for (long long nij = lo; nij <= hi; ++nij) {
                const double term = (nij / nd) * std::log(nd * nij / (static_cast<double>(ai) * static_cast<double>(bj)));
                const double lp = lfact[ai] + lfact[bj] + lfact[n - ai] + lfact[n - bj]
                                - lfact[n] - lfact[nij] - lfact[ai - nij] - lfact[bj - nij]
                                - lfact[n - ai - bj + nij];
                emi += term * std::exp(lp);
            }
        }
    }
    return emi;
}

void check_lengths(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("label vectors differ in length");
    if (a.empty()) throw std::invalid_argument("label vectors are empty");
}

}  // namespace

ContingencyTable contingency(const std::vector<int>& a, const std::vector<int>& b) {
    check_lengths(a, b);
    ContingencyTable t;
    const auto ai = compress(a, t.a_labels);
    const auto bi = compress(b, t.b_labels);
    const int ra = static_cast<int>(t.a_labels.size());
    const int cb = static_cast<int>(t.b_labels.size());
    t.counts = Eigen::MatrixXi::Zero(ra, cb);
    for (size_t m = 0; m < a.size(); ++m) t.counts(ai[m], bi[m]) += 1;
    t.row_sums.assign(ra, 0);
    t.col_sums.assign(cb, 0);
    for (int i = 0; i < ra; ++i)
        for (int j = 0; j < cb; ++j) {
            t.row_sums[i] += t.counts(i, j);
            t.col_sums[j] += t.counts(i, j);
        }
    t.total = static_cast<long long>(a.size());
    return t;
}

double ari(const std::vector<int>& a, const std::vector<int>& b) {
    check_lengths(a, b);
    if (a.size() < 2) throw std::invalid_argument("ari undefined for a single sample");
    const auto t = contingency(a, b);
    double sum_ij = 0.0;
    for (int i = 0; i < t.counts.rows(); ++i)
        for (int j = 0; j < t.counts.cols(); ++j) sum_ij += comb2(t.counts(i, j));
    double sum_a = 0.0, sum_b = 0.0;
    for (long long c : t.row_sums) sum_a += comb2(static_cast<double>(c));
    for (long long c : t.col_sums) sum_b += comb2(static_cast<double>(c));
    const double expected = sum_a * sum_b / comb2(static_cast<double>(t.total));
    const double maximum = 0.5 * (sum_a + sum_b);
    const double num = sum_ij - expected;
    const double den = maximum - expected;
    if (std::abs(den) < 1e-12) return std::abs(num) < 1e-12 ? 1.0 : 0.0;
    return num / den;
}

double nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const auto t = contingency(a, b);
    const double ha = entropy(t.row_sums, t.total);
    const double hb = entropy(t.col_sums, t.total);
    if (ha <= 0.0 && hb <= 0.0) return 1.0;  // both trivial partitions
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    return mutual_information(t) / std::sqrt(ha * hb);
}

double ami(const std::vector<int>& a, const std::vector<int>& b) {
    const auto t = contingency(a, b);
    const double ha = entropy(t.row_sums, t.total);
    const double hb = entropy(t.col_sums, t.total);
    if (ha <= 0.0 && hb <= 0.0) return 1.0;
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    const double mi = mutual_information(t);
    const double emi = expected_mutual_information(t);
    const double den = 0.5 * (ha + hb) - emi;
    if (std::abs(den) < 1e-12) return std::abs(mi - emi) < 1e-12 ? 1.0 : 0.0;
    return (mi - emi) / den;
}

double acc(const std::vector<int>& truth, const std::vector<int>& pred) {
    const auto t = contingency(pred, truth);  // rows: clusters, cols: classes
    std::vector<std::vector<double>> score(t.counts.rows(), std::vector<double>(t.counts.cols()));
    for (int i = 0; i < t.counts.rows(); ++i)
        for (int j = 0; j < t.counts.cols(); ++j) score[i][j] = t.counts(i, j);
    const auto sol = hungarian_max_score(score);
    long long matched = 0;
    for (int i = 0; i < t.counts.rows(); ++i)
        if (sol[i] >= 0) matched += t.counts(i, sol[i]);
    return static_cast<double>(matched) / static_cast<double>(t.total);
}

double silhouette(const MatrixXd& points, const std::vector<int>& labels) {
    const int m = static_cast<int>(points.rows());
    if (static_cast<int>(labels.size()) != m) throw std::invalid_argument("labels/points length mismatch");
    if (m < 3) throw std::invalid_argument("silhouette needs at least 3 points");
    std::vector<int> values;
    const auto li = compress(labels, values);
    const int k = static_cast<int>(values.size());
    if (k < 2) throw std::invalid_argument("silhouette undefined for a single cluster");
    std::vector<long long> sizes(k, 0);
    for (int i : li) sizes[i] += 1;

    double total = 0.0;
    std::vector<double> mean_dist(k);
    for (int i = 0; i < m; ++i) {
        std::fill(mean_dist.begin(), mean_dist.end(), 0.0);
        for (int j = 0; j < m; ++j) {
            if (j == i) continue;
            mean_dist[li[j]] += (points.row(i) - points.row(j)).norm();
        }
        const int ci = li[i];
        if (sizes[ci] <= 1) continue;  // singleton contributes 0
        const double a = mean_dist[ci] / static_cast<double>(sizes[ci] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) {
            if (c == ci || sizes[c] == 0) continue;
            b = std::min(b, mean_dist[c] / static_cast<double>(sizes[c]));
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(m);
}

namespace {

// 1-D Gaussian taps, normalized
std::vector<double> gaussian_taps(int size, double sigma) {
    std::vector<double> w(size);
    const int half = size / 2;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - half;
        w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return w;
}

// separable valid-region filter
Image filter_valid(const Image& img, const std::vector<double>& taps) {
    const int k = static_cast<int>(taps.size());
    const int oh = static_cast<int>(img.rows()) - k + 1;
    const int ow = static_cast<int>(img.cols()) - k + 1;
    Image tmp(oh, img.cols());
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < img.cols(); ++c) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += taps[t] * img(r + t, c);
            tmp(r, c) = s;
        }
    Image out(oh, ow);
    for (int r = 0; r < oh; ++r)
        for (int c = 0; c < ow; ++c) {
            double s = 0.0;
            for (int t = 0; t < k; ++t) s += taps[t] * tmp(r, c + t);
            out(r, c) = s;
        }
    return out;
}

}  // namespace

double ssim(const Image& x, const Image& y, double dynamic_range) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("ssim: image shapes differ");
    int win = 11;
    const int smallest = static_cast<int>(std::min(x.rows(), x.cols()));
    if (smallest < win) win = smallest % 2 == 1 ? smallest : smallest - 1;
    if (win < 1) throw std::invalid_argument("ssim: image too small");
    const auto taps = gaussian_taps(win, 1.5);

    const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
    const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);

    const Image mu_x = filter_valid(x, taps);
    const Image mu_y = filter_valid(y, taps);
    const Image xx = filter_valid(x * x, taps) - mu_x * mu_x;
    const Image yy = filter_valid(y * y, taps) - mu_y * mu_y;
    const Image xy = filter_valid(x * y, taps) - mu_x * mu_y;

    const Image num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2);
    const Image den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2);
    return (num / den).mean();
}

double mse(const Image& x, const Image& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("mse: image shapes differ");
    return (255.0 * (x - y)).square().mean();
}

}  // namespace uqc::metrics
