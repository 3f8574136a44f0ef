#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "uqc/embed.hpp"
#include "uqc/metrics.hpp"

using namespace uqc;

namespace {

Eigen::MatrixXd three_blob_centers(int dim, double dist) {
    Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(3, dim);
    const double s = dist / std::sqrt(2.0);
    centers(0, 0) = s;
    centers(1, 1) = s;
    centers(2, 2) = s;
    return centers;
}

// min inter-centroid distance vs max point-to-own-centroid radius in 2-D
std::pair<double, double> separation(const Eigen::MatrixXd& pts, const std::vector<int>& labels,
                                     int c) {
    Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(c, pts.cols());
    std::vector<int> counts(c, 0);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        centroids.row(labels[i]) += pts.row(i);
        ++counts[labels[i]];
    }
    for (int k = 0; k < c; ++k) centroids.row(k) /= counts[k];
    double min_inter = std::numeric_limits<double>::infinity();
    for (int a = 0; a < c; ++a)
        for (int b = a + 1; b < c; ++b)
            min_inter = std::min(min_inter, (centroids.row(a) - centroids.row(b)).norm());
    double max_radius = 0.0;
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
        max_radius = std::max(max_radius, (pts.row(i) - centroids.row(labels[i])).norm());
    return {min_inter, max_radius};
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

size_t count_occurrences(const std::string& hay, const std::string& needle) {
    size_t n = 0;
    for (size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) ++n;
    return n;
}

}  // namespace

TEST_CASE("low-dimensional kernel fit") {
    const auto [a, b] = embed::fit_ab(0.1);
    CHECK(a == doctest::Approx(1.577).epsilon(0.01));
    CHECK(b == doctest::Approx(0.895).epsilon(0.01));
}

TEST_CASE("reduce shape, ids, determinism, and input validation") {
    const auto [X, labels] = testutil::make_blobs(three_blob_centers(20, 4.0), 67, 0.3, 2);
    REQUIRE(X.rows() == 201);

    embed::ReduceConfig cfg;
    cfg.seed = 7;
    std::vector<std::string> ids(201);
    for (int i = 0; i < 201; ++i) ids[i] = "s" + std::to_string(i);
    const embed::Embedding2D emb = embed::reduce(X, cfg, ids);
    CHECK(emb.points.rows() == 201);
    CHECK(emb.points.cols() == 2);
    CHECK(emb.points.allFinite());
    REQUIRE(emb.ids.size() == 201);
    CHECK(emb.ids[13] == "s13");

    const embed::Embedding2D again = embed::reduce(X, cfg, ids);
    CHECK((emb.points.array() == again.points.array()).all());

    embed::ReduceConfig other = cfg;
    other.seed = 8;
    const embed::Embedding2D diff = embed::reduce(X, other, ids);
    CHECK((emb.points.array() != diff.points.array()).any());

    CHECK_THROWS_AS(embed::reduce(X.topRows(10), cfg), std::domain_error);
    ids.pop_back();
    CHECK_THROWS_AS(embed::reduce(X, cfg, ids), std::domain_error);
}

TEST_CASE("reduce is permutation-equivariant") {
    const auto [X, labels] = testutil::make_blobs(three_blob_centers(12, 3.0), 40, 0.25, 5);
    embed::ReduceConfig cfg;
    cfg.seed = 11;
    const embed::Embedding2D base = embed::reduce(X, cfg);

    Rng rng(99);
    std::vector<size_t> perm(X.rows());
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Eigen::MatrixXd Xp(X.rows(), X.cols());
    for (Eigen::Index i = 0; i < X.rows(); ++i) Xp.row(i) = X.row(static_cast<Eigen::Index>(perm[i]));

    const embed::Embedding2D permuted = embed::reduce(Xp, cfg);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        CHECK((permuted.points.row(i).array() ==
               base.points.row(static_cast<Eigen::Index>(perm[i])).array()).all());
}

TEST_CASE("reduce separates well-spaced blobs") {
    const auto [X, labels] = testutil::make_blobs(three_blob_centers(80, 1.0), 60, 0.05, 3);
    embed::ReduceConfig cfg;
    cfg.seed = 4;
    const embed::Embedding2D emb = embed::reduce(X, cfg);
    const auto [min_inter, max_radius] = separation(emb.points, labels, 3);
    CHECK(min_inter > 3.0 * max_radius);
}

TEST_CASE("hdbscan blob labeling, noise resolution, and validation") {
    Eigen::MatrixXd centers(3, 2);
    centers << 0.0, 0.0, 10.0, 0.0, 0.0, 10.0;
    const auto [blobs, truth] = testutil::make_blobs(centers, 60, 0.35, 6);

    const embed::ClusterLabels out = embed::hdbscan(blobs);
    CHECK(out.C == 3);
    REQUIRE(out.labels.size() == 180);
    CHECK(metrics::ari(truth, out.labels) == doctest::Approx(1.0).epsilon(1e-12));
    std::set<int> seen(out.labels.begin(), out.labels.end());
    CHECK(static_cast<int>(seen.size()) == out.C);
    CHECK(*seen.begin() == 0);
    CHECK(*seen.rbegin() == out.C - 1);

    // identical reruns
    const embed::ClusterLabels rerun = embed::hdbscan(blobs);
    CHECK(rerun.labels == out.labels);
    CHECK(rerun.raw_labels == out.raw_labels);

    // single tight blob
    Eigen::MatrixXd one_center(1, 2);
    one_center << 2.0, -1.0;
    const auto [single, single_truth] = testutil::make_blobs(one_center, 50, 0.1, 7);
    const embed::ClusterLabels lone = embed::hdbscan(single);
    CHECK(lone.C == 1);
    CHECK(std::all_of(lone.labels.begin(), lone.labels.end(), [](int v) { return v == 0; }));

    // far outliers become density noise, then inherit the nearest blob's label
    Eigen::MatrixXd with_outliers(183, 2);
    with_outliers.topRows(180) = blobs;
    with_outliers.row(180) << 25.0, 0.0;   // nearest blob: (10, 0)
    with_outliers.row(181) << 0.0, 25.0;   // nearest blob: (0, 10)
    with_outliers.row(182) << -12.0, -12.0;  // nearest blob: (0, 0)
    const embed::ClusterLabels res = embed::hdbscan(with_outliers);
    CHECK(res.C == 3);
    for (int i = 180; i < 183; ++i) CHECK(res.raw_labels[i] == -1);
    CHECK(std::none_of(res.labels.begin(), res.labels.end(), [](int v) { return v < 0; }));
    // outlier labels match the label their neighbor blob received
    CHECK(res.labels[180] == res.labels[60]);   // second blob rows are 60..119
    CHECK(res.labels[181] == res.labels[120]);
    CHECK(res.labels[182] == res.labels[0]);

    CHECK_THROWS_AS(embed::hdbscan(blobs.topRows(1)), std::domain_error);
    CHECK_THROWS_AS(embed::hdbscan(blobs, 1), std::domain_error);
    CHECK_THROWS_AS(embed::hdbscan(blobs.topRows(4), 5), std::domain_error);
}

TEST_CASE("map_clusters_to_classes recovers permutations and maximizes matches") {
    // pred is truth relabeled by a fixed permutation
    Rng rng(17);
    const std::vector<int> truth = testutil::random_labels(rng, 60, 4);
    const int perm[4] = {2, 0, 3, 1};
    embed::ClusterLabels pred;
    pred.C = 4;
    for (int t : truth) pred.labels.push_back(perm[t]);
    pred.raw_labels = pred.labels;
    const std::vector<int> map = embed::map_clusters_to_classes(pred, truth);
    REQUIRE(map.size() == 4);
    for (int t = 0; t < 4; ++t) CHECK(map[perm[t]] == t);

    // contingency [[5,0],[1,4]]
    embed::ClusterLabels two;
    two.C = 2;
    two.labels = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
    two.raw_labels = two.labels;
    const std::vector<int> t2 = {0, 0, 0, 0, 0, 0, 1, 1, 1, 1};
    const std::vector<int> m2 = embed::map_clusters_to_classes(two, t2);
    CHECK(m2[0] == 0);
    CHECK(m2[1] == 1);
    int matched = 0;
    for (size_t i = 0; i < t2.size(); ++i)
        if (m2[two.labels[i]] == t2[i]) ++matched;
    CHECK(matched == 9);

    // injective into a larger class set
    embed::ClusterLabels narrow;
    narrow.C = 2;
    narrow.labels = {0, 0, 0, 1, 1, 1};
    narrow.raw_labels = narrow.labels;
    const std::vector<int> t3 = {0, 0, 1, 2, 2, 1};
    const std::vector<int> m3 = embed::map_clusters_to_classes(narrow, t3);
    REQUIRE(m3.size() == 2);
    CHECK(m3[0] != m3[1]);
    CHECK(m3[0] >= 0);
    CHECK(m3[0] < 3);
    CHECK(m3[1] >= 0);
    CHECK(m3[1] < 3);
    CHECK(m3[0] == 0);  // 2 hits, and m3[1]=2 keeps the total at 4
    CHECK(m3[1] == 2);

    // exhaustive oracle: matched fraction equals the permutation maximum, C <= 6
    Rng orng(23);
    for (int trial = 0; trial < 60; ++trial) {
        const int m = 8 + static_cast<int>(orng.uniform_index(10));
        const int c = 2 + static_cast<int>(orng.uniform_index(5));
        const std::vector<int> tv = testutil::random_labels(orng, m, c);
        const std::vector<int> pv = testutil::random_labels(orng, m, c);
        embed::ClusterLabels pl;
        pl.labels = pv;
        pl.raw_labels = pv;
        pl.C = 1 + *std::max_element(pv.begin(), pv.end());
        const std::vector<int> pm = embed::map_clusters_to_classes(pl, tv);
        int hits = 0;
        for (int i = 0; i < m; ++i)
            if (pm[pv[i]] == tv[i]) ++hits;
        const double want = testutil::ref_acc(tv, pv);
        CHECK(static_cast<double>(hits) / m == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("criterion 10: blobs to perfect clusters end to end") {
    const auto [X, truth] = testutil::make_blobs(three_blob_centers(80, 1.0), 60, 0.05, 12);
    REQUIRE(X.rows() == 180);

    embed::ReduceConfig cfg;
    cfg.seed = 9;
    const embed::Embedding2D emb = embed::reduce(X, cfg);
    const embed::ClusterLabels pred = embed::assign_labels(emb);
    CHECK(pred.C == 3);

    const std::vector<int> map = embed::map_clusters_to_classes(pred, truth);
    int matched = 0;
    for (int i = 0; i < 180; ++i)
        if (map[pred.labels[i]] == truth[i]) ++matched;
    CHECK(matched == 180);
    CHECK(metrics::acc(truth, pred.labels) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(metrics::ari(truth, pred.labels) == doctest::Approx(1.0).epsilon(1e-12));

    // repeat run is identical
    const embed::Embedding2D emb2 = embed::reduce(X, cfg);
    const embed::ClusterLabels pred2 = embed::assign_labels(emb2);
    CHECK((emb.points.array() == emb2.points.array()).all());
    CHECK(pred2.labels == pred.labels);
}

TEST_CASE("pca projects onto dominant directions") {
    Rng rng(3);
    const int m = 120;
    Eigen::MatrixXd X(m, 5);
    Eigen::RowVectorXd dir(5);
    dir << 2.0, -1.0, 0.5, 0.0, 1.0;
    dir /= dir.norm();
    Eigen::VectorXd t(m);
    for (int i = 0; i < m; ++i) {
        t[i] = rng.normal(0.0, 3.0);
        X.row(i) = t[i] * dir;
        for (int d = 0; d < 5; ++d) X(i, d) += 0.05 * rng.normal();
    }
    const Eigen::MatrixXd proj = embed::pca(X, 2);
    CHECK(proj.rows() == m);
    CHECK(proj.cols() == 2);

    const auto var = [](const Eigen::VectorXd& v) {
        return (v.array() - v.mean()).square().sum() / (v.size() - 1);
    };
    CHECK(var(proj.col(0)) > var(proj.col(1)));

    const Eigen::VectorXd c0 = proj.col(0).array() - proj.col(0).mean();
    const Eigen::VectorXd tc = t.array() - t.mean();
    const double corr = c0.dot(tc) / (c0.norm() * tc.norm());
    CHECK(std::abs(corr) > 0.99);

    const Eigen::MatrixXd again = embed::pca(X, 2);
    CHECK((proj.array() == again.array()).all());

    CHECK_THROWS_AS(embed::pca(X, 0), std::domain_error);
}

TEST_CASE("tsne separates blobs deterministically") {
    const auto [X, labels] = testutil::make_blobs(three_blob_centers(10, 4.0), 40, 0.2, 8);
    const Eigen::MatrixXd y = embed::tsne(X, 14);
    CHECK(y.rows() == 120);
    CHECK(y.cols() == 2);
    CHECK(y.allFinite());
    // every point's nearest embedded neighbor comes from the same blob
    for (int i = 0; i < 120; ++i) {
        int nearest = -1;
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < 120; ++j) {
            if (j == i) continue;
            const double d = (y.row(i) - y.row(j)).squaredNorm();
            if (d < best) best = d, nearest = j;
        }
        CHECK(labels[nearest] == labels[i]);
    }

    const Eigen::MatrixXd y2 = embed::tsne(X, 14);
    CHECK((y.array() == y2.array()).all());

    CHECK_THROWS_AS(embed::tsne(X.topRows(3), 1), std::domain_error);
    CHECK_THROWS_AS(embed::tsne(X, 1, 1000.0), std::domain_error);
}

TEST_CASE("plot_clusters writes png and svg with a legend per cluster") {
    Eigen::MatrixXd centers(3, 2);
    centers << 0.0, 0.0, 8.0, 0.0, 0.0, 8.0;
    const auto [pts, truth] = testutil::make_blobs(centers, 61, 0.3, 9);
    REQUIRE(pts.rows() == 183);
    embed::Embedding2D emb;
    emb.points = pts;
    const embed::ClusterLabels labels = embed::hdbscan(pts);
    REQUIRE(labels.C == 3);

    testutil::ScratchDir dir("embed");
    const std::string png = embed::plot_clusters(emb, labels, nullptr, dir.file("scatter.png"));
    CHECK(png == dir.file("scatter.png"));
    CHECK(std::filesystem::file_size(png) > 0);
    const std::string svg_path = dir.file("scatter.svg");
    REQUIRE(std::filesystem::exists(svg_path));
    const std::string svg = slurp(svg_path);
    CHECK(count_occurrences(svg, "font-size=\"12\"") == 3);  // one legend row per cluster
    CHECK(count_occurrences(svg, "reference labels") == 0);

    // truth adds a second panel (double width) with its own title
    embed::plot_clusters(emb, labels, &truth, dir.file("pair"));
    const std::string paired = slurp(dir.file("pair.svg"));
    CHECK(count_occurrences(paired, "reference labels") == 1);
    CHECK(paired.find("width=\"1320\"") != std::string::npos);

    embed::Embedding2D none;
    none.points.resize(0, 2);
    embed::ClusterLabels empty;
    CHECK_THROWS_AS(embed::plot_clusters(none, empty, nullptr, dir.file("x")), std::domain_error);

    embed::ClusterLabels short_labels = labels;
    short_labels.labels.pop_back();
    CHECK_THROWS_AS(embed::plot_clusters(emb, short_labels, nullptr, dir.file("y")), std::domain_error);
}
