#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include "uqc/embed.hpp"
#include "uqc/rng.hpp"

namespace uqc::embed {

namespace {

struct KnnResult {
    Eigen::MatrixXi idx;   // M x k
    Eigen::MatrixXd dist;  // M x k, ascending per row
};

KnnResult exact_knn(const Eigen::MatrixXd& x, int k) {
    const int m = static_cast<int>(x.rows());
    KnnResult out;
    out.idx.resize(m, k);
    out.dist.resize(m, k);
    const Eigen::VectorXd norms = x.rowwise().squaredNorm();
    const int block = 256;
    std::vector<std::pair<double, int>> row(m);
    for (int start = 0; start < m; start += block) {
        const int rows = std::min(block, m - start);
        const Eigen::MatrixXd prod = x.middleRows(start, rows) * x.transpose();
        for (int r = 0; r < rows; ++r) {
            const int i = start + r;
            for (int j = 0; j < m; ++j)
                row[j] = {std::max(0.0, norms[i] + norms[j] - 2.0 * prod(r, j)), j};
            row[i].first = -1.0;  // force self to the front, dropped below
            std::partial_sort(row.begin(), row.begin() + k + 1, row.end());
            for (int t = 0; t < k; ++t) {
                out.idx(i, t) = row[t + 1].second;
                out.dist(i, t) = std::sqrt(std::max(0.0, row[t + 1].first));
            }
        }
    }
    return out;
}

// sigma/rho calibration: solve sum_j exp(-max(0,d_j - rho)/sigma) = log2(k)
void smooth_knn(const KnnResult& knn, Eigen::VectorXd& rho, Eigen::VectorXd& sigma) {
    const int m = static_cast<int>(knn.dist.rows());
    const int k = static_cast<int>(knn.dist.cols());
    const double target = std::log2(static_cast<double>(k));
    const double mean_all = knn.dist.mean();
    rho.resize(m);
    sigma.resize(m);
    for (int i = 0; i < m; ++i) {
        rho[i] = 0.0;
        for (int t = 0; t < k; ++t)
            if (knn.dist(i, t) > 0.0) { rho[i] = knn.dist(i, t); break; }
        double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
        for (int iter = 0; iter < 64; ++iter) {
            double psum = 0.0;
            for (int t = 1; t < k; ++t) {
                const double d = knn.dist(i, t) - rho[i];
                psum += d > 0.0 ? std::exp(-d / mid) : 1.0;
            }
            if (std::abs(psum - target) < 1e-5) break;
            if (psum > target) {
                hi = mid;
                mid = 0.5 * (lo + hi);
            } else {
                lo = mid;
                mid = std::isinf(hi) ? mid * 2.0 : 0.5 * (lo + hi);
            }
        }
        sigma[i] = mid;
        if (rho[i] > 0.0) {
            const double row_mean = knn.dist.row(i).mean();
            sigma[i] = std::max(sigma[i], 1e-3 * row_mean);
        } else {
            sigma[i] = std::max(sigma[i], 1e-3 * mean_all);
        }
    }
}

std::vector<int> canonical_order(const Eigen::MatrixXd& x) {
    std::vector<int> order(x.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            if (x(a, c) < x(b, c)) return true;
            if (x(a, c) > x(b, c)) return false;
        }
        return false;
    });
    return order;
}

}  // namespace

std::pair<double, double> fit_ab(double min_dist, double spread) {
    // least squares of (1 + a d^(2b))^-1 against the min_dist/spread target
    const int n = 300;
    Eigen::VectorXd xs(n), ys(n);
    for (int i = 0; i < n; ++i) {
        const double d = 3.0 * spread * (i + 1) / n;
        xs[i] = d;
        ys[i] = d < min_dist ? 1.0 : std::exp(-(d - min_dist) / spread);
    }
    double a = 1.0, b = 1.0;
    double lambda = 1e-3;
    auto residual = [&](double aa, double bb, Eigen::VectorXd& r) {
        double sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = std::pow(xs[i], 2.0 * bb);
            r[i] = 1.0 / (1.0 + aa * t) - ys[i];
            sq += r[i] * r[i];
        }
        return sq;
    };
    Eigen::VectorXd r(n);
    double cost = residual(a, b, r);
    for (int iter = 0; iter < 200; ++iter) {
        Eigen::MatrixXd J(n, 2);
        for (int i = 0; i < n; ++i) {
            const double t = std::pow(xs[i], 2.0 * b);
            const double denom = (1.0 + a * t) * (1.0 + a * t);
            J(i, 0) = -t / denom;
            J(i, 1) = -a * t * 2.0 * std::log(xs[i]) / denom;
        }
        const Eigen::Matrix2d h = J.transpose() * J + lambda * Eigen::Matrix2d::Identity();
        const Eigen::Vector2d g = J.transpose() * r;
        const Eigen::Vector2d step = h.ldlt().solve(g);
        const double na = a - step[0], nb = b - step[1];
        Eigen::VectorXd nr(n);
        const double ncost = na > 0.0 && nb > 0.0 ? residual(na, nb, nr) : std::numeric_limits<double>::infinity();
        if (ncost < cost) {
            a = na;
            b = nb;
            r = nr;
            cost = ncost;
            lambda = std::max(lambda * 0.5, 1e-9);
            if (step.norm() < 1e-12) break;
        } else {
            lambda *= 4.0;
            if (lambda > 1e9) break;
        }
    }
    return {a, b};
}

Embedding2D reduce(const Eigen::MatrixXd& latents, const ReduceConfig& cfg, std::vector<std::string> ids) {
    const int m = static_cast<int>(latents.rows());
    if (m < cfg.n_neighbors + 1)
        throw std::domain_error("reduce needs at least n_neighbors + 1 samples");
    if (!ids.empty() && static_cast<int>(ids.size()) != m)
        throw std::domain_error("ids length mismatch");

    // canonical row order makes the result independent of input permutation
    const std::vector<int> order = canonical_order(latents);
    Eigen::MatrixXd x(m, latents.cols());
    for (int i = 0; i < m; ++i) x.row(i) = latents.row(order[i]);

    const int k = cfg.n_neighbors;
    const KnnResult knn = exact_knn(x, k);
    Eigen::VectorXd rho, sigma;
    smooth_knn(knn, rho, sigma);

    // directed membership strengths, then fuzzy set union a+b-ab
    std::map<std::pair<int, int>, double> directed;
    for (int i = 0; i < m; ++i)
        for (int t = 0; t < k; ++t) {
            const double d = knn.dist(i, t) - rho[i];
            directed[{i, knn.idx(i, t)}] = d > 0.0 ? std::exp(-d / sigma[i]) : 1.0;
        }
    std::map<std::pair<int, int>, double> undirected;
    for (const auto& [e, w] : directed) {
        if (e.first >= e.second) continue;
        const auto rev = directed.find({e.second, e.first});
        const double wr = rev == directed.end() ? 0.0 : rev->second;
        undirected[e] = w + wr - w * wr;
    }
    for (const auto& [e, w] : directed) {
        if (e.first <= e.second) continue;
        const std::pair<int, int> key{e.second, e.first};
        if (!undirected.count(key)) undirected[key] = w;  // one-directional edge
    }

    int n_epochs = cfg.n_epochs > 0 ? cfg.n_epochs : (m <= 10000 ? 500 : 200);
    double w_max = 0.0;
    for (const auto& [e, w] : undirected) w_max = std::max(w_max, w);
    std::vector<int> head, tail;
    std::vector<double> eps;  // epochs per sample
    for (const auto& [e, w] : undirected) {
        if (w < w_max / n_epochs) continue;
        head.push_back(e.first);
        tail.push_back(e.second);
        eps.push_back(w_max / w);
        head.push_back(e.second);
        tail.push_back(e.first);
        eps.push_back(w_max / w);
    }
    const size_t n_edges = head.size();

    // PCA initialization scaled to a 10-unit extent
    Eigen::MatrixXd y = pca(x, 2);
    const double extent = y.array().abs().maxCoeff();
    if (extent > 0.0) y *= 10.0 / extent;

    const auto [a, b] = fit_ab(cfg.min_dist);
    const double neg_rate = 5.0;
    std::vector<double> next_sample(eps), eps_neg(n_edges), next_neg(n_edges);
    for (size_t e = 0; e < n_edges; ++e) {
        eps_neg[e] = eps[e] / neg_rate;
        next_neg[e] = eps_neg[e];
    }

    Rng rng(cfg.seed);
    const auto clip4 = [](double v) { return std::clamp(v, -4.0, 4.0); };
    for (int epoch = 0; epoch < n_epochs; ++epoch) {
        const double alpha = 1.0 - static_cast<double>(epoch) / n_epochs;
        for (size_t e = 0; e < n_edges; ++e) {
            if (next_sample[e] > epoch) continue;
            const int i = head[e], j = tail[e];
            double d2 = (y.row(i) - y.row(j)).squaredNorm();
            if (d2 > 0.0) {
                const double gc = -2.0 * a * b * std::pow(d2, b - 1.0) / (a * std::pow(d2, b) + 1.0);
                for (int dim = 0; dim < 2; ++dim) {
                    const double g = clip4(gc * (y(i, dim) - y(j, dim)));
                    y(i, dim) += g * alpha;
                    y(j, dim) -= g * alpha;
                }
            }
            next_sample[e] += eps[e];
            const int n_neg = static_cast<int>((epoch - next_neg[e]) / eps_neg[e]);
            for (int p = 0; p < n_neg; ++p) {
                const int r = static_cast<int>(rng.uniform_index(static_cast<size_t>(m)));
                if (r == i) continue;
                d2 = (y.row(i) - y.row(r)).squaredNorm();
                double gc = 0.0;
                if (d2 > 0.0) gc = 2.0 * b / ((0.001 + d2) * (a * std::pow(d2, b) + 1.0));
                for (int dim = 0; dim < 2; ++dim) {
                    const double g = gc > 0.0 ? clip4(gc * (y(i, dim) - y(r, dim))) : 4.0;
                    y(i, dim) += g * alpha;
                }
            }
            next_neg[e] += n_neg * eps_neg[e];
        }
    }

    Embedding2D out;
    out.points.resize(m, 2);
    for (int i = 0; i < m; ++i) out.points.row(order[i]) = y.row(i);
    if (ids.empty()) {
        out.ids.resize(m);
        for (int i = 0; i < m; ++i) out.ids[i] = std::to_string(i);
    } else {
        out.ids = std::move(ids);
    }
    return out;
}

}  // namespace uqc::embed
