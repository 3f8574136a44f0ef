#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>
#include <vector>

#include "uqc/embed.hpp"
#include "uqc/hungarian.hpp"

namespace uqc::embed {

namespace {

constexpr double kLambdaCap = 1e15;

struct MstEdge {
    int a;
    int b;
    double w;
};

struct CondensedRow {
    int parent;
    int child;  // < M: point, >= M: cluster
    double lambda;
    int size;
};

Eigen::VectorXd core_distances(const Eigen::MatrixXd& x, int min_samples) {
    const int m = static_cast<int>(x.rows());
    Eigen::VectorXd core(m);
    std::vector<double> d(m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) d[j] = (x.row(i) - x.row(j)).norm();
        std::nth_element(d.begin(), d.begin() + min_samples, d.end());
        core[i] = d[min_samples];  // self sits at rank 0
    }
    return core;
}

std::vector<MstEdge> prim_mst(const Eigen::MatrixXd& x, const Eigen::VectorXd& core) {
    const int m = static_cast<int>(x.rows());
    std::vector<char> in_tree(m, 0);
    std::vector<double> best(m, std::numeric_limits<double>::infinity());
    std::vector<int> from(m, 0);
    std::vector<MstEdge> edges;
    edges.reserve(m - 1);
    in_tree[0] = 1;
    int last = 0;
    for (int step = 1; step < m; ++step) {
        int pick = -1;
        for (int j = 0; j < m; ++j) {
            if (in_tree[j]) continue;
            const double d = (x.row(last) - x.row(j)).norm();
            const double mr = std::max({core[last], core[j], d});
            if (mr < best[j]) {
                best[j] = mr;
                from[j] = last;
            }
            if (pick < 0 || best[j] < best[pick]) pick = j;
        }
        edges.push_back({from[pick], pick, best[pick]});
        in_tree[pick] = 1;
        last = pick;
    }
    return edges;
}

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) {
        for (int i = 0; i < n; ++i) parent[i] = i;
    }
    int find(int v) {
        while (parent[v] != v) {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        return v;
    }
};

}  // namespace

ClusterLabels hdbscan(const Eigen::MatrixXd& points, int min_cluster_size) {
    const int m = static_cast<int>(points.rows());
    if (m < 2) throw std::domain_error("hdbscan needs at least two points");
    int mcs = min_cluster_size;
    if (mcs == 0) mcs = std::max(5, m / 50);
    if (mcs < 2) throw std::domain_error("min_cluster_size must be at least 2");
    const int min_samples = mcs;
    if (m <= min_samples)
        throw std::domain_error("hdbscan needs more points than min_cluster_size");

    const Eigen::VectorXd core = core_distances(points, min_samples);
    std::vector<MstEdge> edges = prim_mst(points, core);
    std::sort(edges.begin(), edges.end(), [](const MstEdge& l, const MstEdge& r) {
        if (l.w != r.w) return l.w < r.w;
        const int la = std::min(l.a, l.b), lb = std::max(l.a, l.b);
        const int ra = std::min(r.a, r.b), rb = std::max(r.a, r.b);
        return la != ra ? la < ra : lb < rb;
    });

    // single linkage: leaves 0..m-1, merge step s makes node m+s
    std::vector<int> left(m - 1), right(m - 1), sz(2 * m - 1, 1);
    std::vector<double> dist(m - 1);
    UnionFind uf(m);
    std::vector<int> comp_node(m);
    for (int i = 0; i < m; ++i) comp_node[i] = i;
    for (int s = 0; s < m - 1; ++s) {
        const int ra = uf.find(edges[s].a);
        const int rb = uf.find(edges[s].b);
        left[s] = comp_node[ra];
        right[s] = comp_node[rb];
        dist[s] = edges[s].w;
        sz[m + s] = sz[left[s]] + sz[right[s]];
        uf.parent[rb] = ra;
        comp_node[ra] = m + s;
    }
    const int root = 2 * m - 2;

    // condense: clusters below min_cluster_size dissolve into their parent
    std::vector<int> bfs;
    bfs.push_back(root);
    for (size_t q = 0; q < bfs.size(); ++q) {
        const int node = bfs[q];
        if (node < m) continue;
        bfs.push_back(left[node - m]);
        bfs.push_back(right[node - m]);
    }
    std::vector<int> relabel(2 * m - 1, -1);
    std::vector<char> ignore(2 * m - 1, 0);
    relabel[root] = m;
    int next_label = m + 1;
    std::vector<CondensedRow> rows;
    const auto shed = [&](int top, int parent_label, double lambda) {
        std::deque<int> q{top};
        while (!q.empty()) {
            const int node = q.front();
            q.pop_front();
            ignore[node] = 1;
            if (node < m) {
                rows.push_back({parent_label, node, lambda, 1});
            } else {
                q.push_back(left[node - m]);
                q.push_back(right[node - m]);
            }
        }
    };
    for (const int node : bfs) {
        if (node < m || ignore[node]) continue;
        const int l = left[node - m], r = right[node - m];
        const double d = dist[node - m];
        const double lambda = d > 0.0 ? std::min(1.0 / d, kLambdaCap) : kLambdaCap;
        const bool l_big = sz[l] >= mcs, r_big = sz[r] >= mcs;
        if (l_big && r_big) {
            relabel[l] = next_label++;
            rows.push_back({relabel[node], relabel[l], lambda, sz[l]});
            relabel[r] = next_label++;
            rows.push_back({relabel[node], relabel[r], lambda, sz[r]});
        } else if (!l_big && !r_big) {
            shed(l, relabel[node], lambda);
            shed(r, relabel[node], lambda);
        } else if (l_big) {
            relabel[l] = relabel[node];
            shed(r, relabel[node], lambda);
        } else {
            relabel[r] = relabel[node];
            shed(l, relabel[node], lambda);
        }
    }

    const int n_clusters = next_label - m;
    std::vector<double> birth(n_clusters, 0.0), stability(n_clusters, 0.0);
    std::vector<int> cluster_parent(n_clusters, -1), point_parent(m, -1);
    std::map<int, std::vector<int>> cluster_children;
    for (const CondensedRow& row : rows) {
        if (row.child >= m) {
            birth[row.child - m] = row.lambda;
            cluster_parent[row.child - m] = row.parent;
            cluster_children[row.parent].push_back(row.child);
        } else {
            point_parent[row.child] = row.parent;
        }
    }
    for (const CondensedRow& row : rows)
        stability[row.parent - m] += (row.lambda - birth[row.parent - m]) * row.size;

    // excess of mass, root excluded
    std::vector<char> is_cluster(n_clusters, 1);
    is_cluster[0] = 0;
    for (int id = next_label - 1; id > m; --id) {
        double subtree = 0.0;
        const auto it = cluster_children.find(id);
        if (it != cluster_children.end())
            for (const int child : it->second) subtree += stability[child - m];
        if (subtree > stability[id - m] && it != cluster_children.end()) {
            is_cluster[id - m] = 0;
            stability[id - m] = subtree;
        } else {
            std::deque<int> q{id};
            while (!q.empty()) {
                const int node = q.front();
                q.pop_front();
                if (node != id) is_cluster[node - m] = 0;
                const auto jt = cluster_children.find(node);
                if (jt != cluster_children.end())
                    for (const int child : jt->second) q.push_back(child);
            }
        }
    }

    std::vector<int> selected;
    for (int c = 1; c < n_clusters; ++c)
        if (is_cluster[c]) selected.push_back(m + c);

    ClusterLabels out;
    out.raw_labels.assign(m, -1);
    if (selected.empty()) {
        // the hierarchy never produced a viable split; keep everything together
        out.raw_labels.assign(m, 0);
        out.labels = out.raw_labels;
        out.C = 1;
        return out;
    }
    std::map<int, int> label_of;
    for (size_t i = 0; i < selected.size(); ++i) label_of[selected[i]] = static_cast<int>(i);
    for (int p = 0; p < m; ++p) {
        int cur = point_parent[p];
        while (cur != m && !label_of.count(cur)) cur = cluster_parent[cur - m];
        const auto it = label_of.find(cur);
        if (it != label_of.end()) out.raw_labels[p] = it->second;
    }
    out.C = static_cast<int>(selected.size());

    out.labels = out.raw_labels;
    for (int p = 0; p < m; ++p) {
        if (out.raw_labels[p] >= 0) continue;
        double best = std::numeric_limits<double>::infinity();
        int pick = -1;
        for (int q = 0; q < m; ++q) {
            if (out.raw_labels[q] < 0) continue;
            const double d = (points.row(p) - points.row(q)).squaredNorm();
            if (d < best) {
                best = d;
                pick = q;
            }
        }
        out.labels[p] = out.raw_labels[pick];
    }
    return out;
}

ClusterLabels assign_labels(const Embedding2D& embedding, const HdbscanConfig& cfg) {
    return hdbscan(embedding.points, cfg.min_cluster_size);
}

std::vector<int> map_clusters_to_classes(const ClusterLabels& pred, const std::vector<int>& truth) {
    if (pred.labels.size() != truth.size())
        throw std::domain_error("label vectors differ in length");
    if (pred.C <= 0) return {};
    std::vector<int> classes(truth);
    std::sort(classes.begin(), classes.end());
    classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    std::map<int, int> class_col;
    for (size_t j = 0; j < classes.size(); ++j) class_col[classes[j]] = static_cast<int>(j);
    std::vector<std::vector<double>> score(pred.C, std::vector<double>(classes.size(), 0.0));
    for (size_t i = 0; i < truth.size(); ++i)
        score[pred.labels[i]][class_col[truth[i]]] += 1.0;
    const std::vector<int> assign = hungarian_max_score(score);
    std::vector<int> mapped(pred.C, -1);
    for (int c = 0; c < pred.C; ++c)
        if (assign[c] >= 0) mapped[c] = classes[assign[c]];
    return mapped;
}

}  // namespace uqc::embed
