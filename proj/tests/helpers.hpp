#pragma once

// Shared test utilities: brute-force reference metrics, synthetic data
// generators, and a scratch-directory guard. The reference implementations
// here are deliberately naive (pair loops, exact factorials, exhaustive
// permutations) so they stay independent of the library code under test.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "uqc/rng.hpp"

namespace testutil {

// ---- brute-force clustering metrics -------------------------------------

// ARI by explicit O(M^2) pair counting.
inline double ref_ari(const std::vector<int>& a, const std::vector<int>& b) {
    const int n = static_cast<int>(a.size());
    double both = 0.0, in_a = 0.0, in_b = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const bool sa = a[i] == a[j];
            const bool sb = b[i] == b[j];
            if (sa) in_a += 1.0;
            if (sb) in_b += 1.0;
            if (sa && sb) both += 1.0;
        }
    const double total = n * (n - 1.0) / 2.0;
    const double expected = in_a * in_b / total;
    const double maximum = 0.5 * (in_a + in_b);
    if (std::abs(maximum - expected) < 1e-12)
        return std::abs(both - expected) < 1e-12 ? 1.0 : 0.0;
    return (both - expected) / (maximum - expected);
}

inline std::map<int, int> ref_counts(const std::vector<int>& v) {
    std::map<int, int> c;
    for (int x : v) c[x] += 1;
    return c;
}

inline double ref_entropy(const std::vector<int>& v) {
    double h = 0.0;
    const double n = static_cast<double>(v.size());
    for (const auto& [val, cnt] : ref_counts(v)) h -= (cnt / n) * std::log(cnt / n);
    return h;
}

inline double ref_mi(const std::vector<int>& a, const std::vector<int>& b) {
    std::map<std::pair<int, int>, int> joint;
    for (size_t i = 0; i < a.size(); ++i) joint[{a[i], b[i]}] += 1;
    const auto ca = ref_counts(a);
    const auto cb = ref_counts(b);
    const double n = static_cast<double>(a.size());
    double mi = 0.0;
    for (const auto& [key, nij] : joint) {
        const double pij = nij / n;
        const double pa = ca.at(key.first) / n;
        const double pb = cb.at(key.second) / n;
        mi += pij * std::log(pij / (pa * pb));
    }
    return mi;
}

inline double ref_nmi(const std::vector<int>& a, const std::vector<int>& b) {
    const double ha = ref_entropy(a);
    const double hb = ref_entropy(b);
    if (ha <= 0.0 && hb <= 0.0) return 1.0;
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    return ref_mi(a, b) / std::sqrt(ha * hb);
}

inline double ref_factorial(long long n) {
    double f = 1.0;
    for (long long i = 2; i <= n; ++i) f *= static_cast<double>(i);
    return f;  // exact in double for n <= 20
}

// Exact expected mutual information under the hypergeometric permutation
// model, summed with plain factorials (valid for the small M used in tests).
inline double ref_emi(const std::vector<int>& a, const std::vector<int>& b) {
    const long long n = static_cast<long long>(a.size());
    std::vector<long long> as, bs;
    for (const auto& [v, c] : ref_counts(a)) as.push_back(c);
    for (const auto& [v, c] : ref_counts(b)) bs.push_back(c);
    double emi = 0.0;
    for (long long ai : as)
        for (long long bj : bs) {
            const long long lo = std::max<long long>(1, ai + bj - n);
            const long long hi = std::min(ai, bj);
            for (long long nij = lo; nij <= hi; ++nij) {
                const double p = ref_factorial(ai) * ref_factorial(bj) * ref_factorial(n - ai) *
                                 ref_factorial(n - bj) /
                                 (ref_factorial(n) * ref_factorial(nij) * ref_factorial(ai - nij) *
                                  ref_factorial(bj - nij) * ref_factorial(n - ai - bj + nij));
                const double nd = static_cast<double>(n);
                emi += p * (nij / nd) * std::log(nd * nij / (static_cast<double>(ai) * bj));
            }
        }
    return emi;
}

inline double ref_ami(const std::vector<int>& a, const std::vector<int>& b) {
    const double ha = ref_entropy(a);
    const double hb = ref_entropy(b);
    if (ha <= 0.0 && hb <= 0.0) return 1.0;
    if (ha <= 0.0 || hb <= 0.0) return 0.0;
    const double mi = ref_mi(a, b);
    const double emi = ref_emi(a, b);
    const double den = 0.5 * (ha + hb) - emi;
    if (std::abs(den) < 1e-12) return std::abs(mi - emi) < 1e-12 ? 1.0 : 0.0;
    return (mi - emi) / den;
}

// ACC by exhaustive search over all one-to-one cluster -> class assignments.
inline double ref_acc(const std::vector<int>& truth, const std::vector<int>& pred) {
    std::vector<int> tv, pv;
    for (const auto& [v, c] : ref_counts(truth)) tv.push_back(v);
    for (const auto& [v, c] : ref_counts(pred)) pv.push_back(v);
    const int side = static_cast<int>(std::max(tv.size(), pv.size()));
    std::vector<int> perm(side);
    std::iota(perm.begin(), perm.end(), 0);
    long long best = 0;
    do {
        long long matched = 0;
        for (size_t m = 0; m < truth.size(); ++m) {
            const int pi = static_cast<int>(std::find(pv.begin(), pv.end(), pred[m]) - pv.begin());
            const int assigned = perm[pi];
            if (assigned < static_cast<int>(tv.size()) && tv[assigned] == truth[m]) ++matched;
        }
        best = std::max(best, matched);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(best) / static_cast<double>(truth.size());
}

// ---- synthetic data -------------------------------------------------------

inline std::vector<int> random_labels(uqc::Rng& rng, int m, int c) {
    std::vector<int> v(m);
    for (int i = 0; i < m; ++i) v[i] = static_cast<int>(rng.uniform_index(c));
    return v;
}

// Gaussian blobs around given centers; returns (points, labels).
inline std::pair<Eigen::MatrixXd, std::vector<int>> make_blobs(const Eigen::MatrixXd& centers,
                                                               int per_blob, double sigma,
                                                               uint64_t seed) {
    uqc::Rng rng(seed);
    const int k = static_cast<int>(centers.rows());
    const int d = static_cast<int>(centers.cols());
    Eigen::MatrixXd pts(k * per_blob, d);
    std::vector<int> labels(k * per_blob);
    for (int b = 0; b < k; ++b)
        for (int i = 0; i < per_blob; ++i) {
            const int row = b * per_blob + i;
            for (int j = 0; j < d; ++j) pts(row, j) = centers(b, j) + sigma * rng.normal();
            labels[row] = b;
        }
    return {pts, labels};
}

// ---- filesystem -----------------------------------------------------------

// Unique scratch directory removed on destruction.
struct ScratchDir {
    std::filesystem::path path;

    explicit ScratchDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("uqc_test_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testutil
