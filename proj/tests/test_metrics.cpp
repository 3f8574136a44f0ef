#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "helpers.hpp"
#include "uqc/metrics.hpp"

using namespace uqc;
using testutil::ref_acc;
using testutil::ref_ami;
using testutil::ref_ari;
using testutil::ref_nmi;

TEST_CASE("contingency basics") {
    auto t = metrics::contingency({0, 0, 1, 1}, {0, 0, 1, 1});
    CHECK(t.counts(0, 0) == 2);
    CHECK(t.counts(0, 1) == 0);
    CHECK(t.counts(1, 0) == 0);
    CHECK(t.counts(1, 1) == 2);

    t = metrics::contingency({0, 0, 1, 1}, {1, 1, 0, 0});
    CHECK(t.counts(0, 0) == 0);
    CHECK(t.counts(0, 1) == 2);
    CHECK(t.counts(1, 0) == 2);
    CHECK(t.counts(1, 1) == 0);

    CHECK_THROWS_AS(metrics::contingency({0, 1}, {0}), std::invalid_argument);
    CHECK_THROWS_AS(metrics::contingency({}, {}), std::invalid_argument);
}

TEST_CASE("contingency marginals match direct counts") {
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const auto a = testutil::random_labels(rng, 50, 4);
        const auto b = testutil::random_labels(rng, 50, 3);
        const auto t = metrics::contingency(a, b);
        long long total = 0;
        for (size_t i = 0; i < t.row_sums.size(); ++i) {
            long long direct = 0;
            for (int x : a)
                if (x == t.a_labels[i]) ++direct;
            CHECK(t.row_sums[i] == direct);
            total += direct;
        }
        CHECK(total == 50);
        for (size_t j = 0; j < t.col_sums.size(); ++j) {
            long long direct = 0;
            for (int x : b)
                if (x == t.b_labels[j]) ++direct;
            CHECK(t.col_sums[j] == direct);
        }
    }
}

TEST_CASE("ari hand values") {
    CHECK(metrics::ari({0, 1, 1, 2}, {0, 1, 1, 2}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(metrics::ari({0, 0, 1, 1}, {2, 2, 7, 7}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(metrics::ari({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK_THROWS_AS(metrics::ari({0}, {0}), std::invalid_argument);
}

TEST_CASE("nmi and ami hand values and degenerate conventions") {
    CHECK(metrics::nmi({0, 1, 2, 0}, {0, 1, 2, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(metrics::ami({0, 1, 2, 0}, {0, 1, 2, 0}) == doctest::Approx(1.0).epsilon(1e-12));
    // independent partitions carry zero mutual information
    CHECK(metrics::nmi({0, 0, 1, 1}, {0, 1, 0, 1}) == doctest::Approx(0.0).epsilon(1e-12));
    // constant labelings
    CHECK(metrics::nmi({3, 3, 3}, {5, 5, 5}) == 1.0);
    CHECK(metrics::ami({3, 3, 3}, {5, 5, 5}) == 1.0);
    CHECK(metrics::nmi({3, 3, 3}, {0, 1, 2}) == 0.0);
    CHECK(metrics::ami({0, 1, 2}, {3, 3, 3}) == 0.0);
}

TEST_CASE("ami of random labelings is centered near zero") {
    Rng rng(23);
    double mean = 0.0;
    for (int t = 0; t < 10; ++t) {
        const auto a = testutil::random_labels(rng, 100, 4);
        const auto b = testutil::random_labels(rng, 100, 4);
        mean += metrics::ami(a, b);
    }
    mean /= 10.0;
    CHECK(mean > -0.1);
    CHECK(mean < 0.1);
}

TEST_CASE("acc hand values") {
    CHECK(metrics::acc({0, 1, 2, 1}, {2, 0, 1, 0}) == doctest::Approx(1.0));
    CHECK(metrics::acc({0, 0, 0, 1, 1}, {1, 1, 0, 0, 0}) == doctest::Approx(0.8));
    CHECK_THROWS_AS(metrics::acc({}, {}), std::invalid_argument);
}

// The acceptance gate's oracle sweep: every agreement metric against its
// naive reference on random instances.
TEST_CASE("metric oracle sweep, 200 random instances") {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(9001);
    double worst = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        const int m = 2 + static_cast<int>(rng.uniform_index(11));  // 2..12
        const int ca = 1 + static_cast<int>(rng.uniform_index(4));
        const int cb = 1 + static_cast<int>(rng.uniform_index(4));
        const auto a = testutil::random_labels(rng, m, ca);
        const auto b = testutil::random_labels(rng, m, cb);
        if (m >= 2) worst = std::max(worst, std::abs(metrics::ari(a, b) - ref_ari(a, b)));
        worst = std::max(worst, std::abs(metrics::nmi(a, b) - ref_nmi(a, b)));
        worst = std::max(worst, std::abs(metrics::ami(a, b) - ref_ami(a, b)));
        worst = std::max(worst, std::abs(metrics::acc(a, b) - ref_acc(a, b)));
    }
    CHECK(worst <= 1e-9);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(secs < 10.0);
}

TEST_CASE("agreement metrics are symmetric and relabel invariant") {
    Rng rng(77);
    for (int t = 0; t < 20; ++t) {
        const auto a = testutil::random_labels(rng, 30, 3);
        const auto b = testutil::random_labels(rng, 30, 3);
        CHECK(metrics::ari(a, b) == doctest::Approx(metrics::ari(b, a)).epsilon(1e-12));
        CHECK(metrics::nmi(a, b) == doctest::Approx(metrics::nmi(b, a)).epsilon(1e-12));
        CHECK(metrics::ami(a, b) == doctest::Approx(metrics::ami(b, a)).epsilon(1e-12));
    }

    // exhaustive over all 6 relabelings of three label values
    const auto a = testutil::random_labels(rng, 24, 3);
    const auto b = testutil::random_labels(rng, 24, 3);
    std::vector<int> perm = {0, 1, 2};
    const double base_ari = metrics::ari(a, b);
    const double base_nmi = metrics::nmi(a, b);
    const double base_ami = metrics::ami(a, b);
    const double base_acc = metrics::acc(a, b);
    do {
        std::vector<int> pa(a.size());
        for (size_t i = 0; i < a.size(); ++i) pa[i] = perm[a[i]];
        CHECK(metrics::ari(pa, b) == doctest::Approx(base_ari).epsilon(1e-12));
        CHECK(metrics::nmi(pa, b) == doctest::Approx(base_nmi).epsilon(1e-12));
        CHECK(metrics::ami(pa, b) == doctest::Approx(base_ami).epsilon(1e-12));
        CHECK(metrics::acc(pa, b) == doctest::Approx(base_acc).epsilon(1e-12));
    } while (std::next_permutation(perm.begin(), perm.end()));
}

TEST_CASE("metric ranges") {
    Rng rng(5);
    for (int t = 0; t < 50; ++t) {
        const int m = 3 + static_cast<int>(rng.uniform_index(20));
        const auto a = testutil::random_labels(rng, m, 4);
        const auto b = testutil::random_labels(rng, m, 4);
        const double v_nmi = metrics::nmi(a, b);
        const double v_acc = metrics::acc(a, b);
        CHECK(v_nmi >= 0.0);
        CHECK(v_nmi <= 1.0 + 1e-12);
        CHECK(v_acc >= 0.0);
        CHECK(v_acc <= 1.0);
        CHECK(metrics::ari(a, b) <= 1.0 + 1e-12);
        CHECK(metrics::ami(a, b) <= 1.0 + 1e-12);
    }
}

TEST_CASE("silhouette") {
    // two tight, far-separated pairs
    MatrixXd pts(4, 2);
    pts << 0.0, 0.0, 0.1, 0.0, 10.0, 0.0, 10.1, 0.0;
    const double s = metrics::silhouette(pts, {0, 0, 1, 1});
    CHECK(s > 0.95);

    // identical points in two clusters: a = b = 0 contributes 0
    MatrixXd same = MatrixXd::Zero(4, 2);
    CHECK(metrics::silhouette(same, {0, 0, 1, 1}) == doctest::Approx(0.0));

    // singleton cluster contributes 0
    MatrixXd three(3, 2);
    three << 0.0, 0.0, 10.0, 0.0, 10.1, 0.0;
    const double expected = ((10.0 - 0.1) / 10.0 + (10.1 - 0.1) / 10.1) / 3.0;
    CHECK(metrics::silhouette(three, {0, 1, 1}) == doctest::Approx(expected).epsilon(1e-12));

    CHECK_THROWS_AS(metrics::silhouette(pts, {0, 0, 0, 0}), std::invalid_argument);
    MatrixXd two(2, 2);
    two << 0.0, 0.0, 1.0, 1.0;
    CHECK_THROWS_AS(metrics::silhouette(two, {0, 1}), std::invalid_argument);
}

TEST_CASE("silhouette decreases when tight blobs are oversplit") {
    Eigen::MatrixXd centers(3, 2);
    centers << 0.0, 0.0, 10.0, 0.0, 0.0, 10.0;
    auto [pts, labels3] = testutil::make_blobs(centers, 30, 0.2, 42);

    // split blob 0 into two, then blob 1 as well
    std::vector<int> labels4 = labels3, labels5;
    for (int i = 0; i < 15; ++i) labels4[i] = 3;
    labels5 = labels4;
    for (int i = 30; i < 45; ++i) labels5[i] = 4;

    const double s3 = metrics::silhouette(pts, labels3);
    const double s4 = metrics::silhouette(pts, labels4);
    const double s5 = metrics::silhouette(pts, labels5);
    CHECK(s3 > s4);
    CHECK(s4 > s5);
}

TEST_CASE("ssim and mse") {
    Rng rng(3);
    Image x(32, 32);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) x(r, c) = rng.uniform();

    CHECK(metrics::ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(metrics::mse(x, x) == 0.0);

    // constant offset of 0.1 on the [0,1] scale
    const Image zeros = Image::Zero(20, 20);
    const Image tenth = Image::Constant(20, 20, 0.1);
    CHECK(metrics::mse(zeros, tenth) == doctest::Approx(650.25).epsilon(1e-12));

    Image y = x;
    y(5, 5) = 1.0 - y(5, 5);
    CHECK(metrics::ssim(x, y) < 1.0);
    CHECK(metrics::ssim(x, y) == metrics::ssim(y, x));  // symmetric by construction
    CHECK(metrics::ssim(x, y) >= -1.0);
    CHECK(metrics::ssim(x, y) <= 1.0);

    Image small(8, 9);
    small.setZero();
    CHECK(metrics::ssim(small, small) == doctest::Approx(1.0));

    Image other(16, 16);
    other.setZero();
    CHECK_THROWS_AS(metrics::ssim(x, other), std::invalid_argument);
    CHECK_THROWS_AS(metrics::mse(x, other), std::invalid_argument);
}
