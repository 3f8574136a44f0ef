#pragma once

#include <limits>
#include <vector>

namespace uqc {

// Jonker-Volgenant style shortest augmenting path solver, O(n^3).
// cost is square n x n; returns row -> column assignment minimizing total cost.
inline std::vector<int> hungarian_min_cost(const std::vector<std::vector<double>>& cost) {
    const int n = static_cast<int>(cost.size());
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, std::numeric_limits<double>::infinity());
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            int i0 = p[j0], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) { minv[j] = cur; way[j] = j0; }
                if (minv[j] < delta) { delta = minv[j]; j1 = j; }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) { u[p[j]] += delta; v[j] -= delta; }
                else minv[j] -= delta;
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> rowsol(n, -1);
    for (int j = 1; j <= n; ++j)
        if (p[j] > 0) rowsol[p[j] - 1] = j - 1;
    return rowsol;
}

// Maximum-weight one-to-one assignment on a (possibly rectangular) score
// matrix; pads to square with zeros. Returns row -> column (or -1 when the
// row is matched to a padding column).
inline std::vector<int> hungarian_max_score(const std::vector<std::vector<double>>& score) {
    const int r = static_cast<int>(score.size());
    const int c = r > 0 ? static_cast<int>(score[0].size()) : 0;
    const int n = r > c ? r : c;
    if (n == 0) return {};
    double maxv = 0.0;
    for (const auto& row : score)
        for (double s : row)
            if (s > maxv) maxv = s;
    std::vector<std::vector<double>> cost(n, std::vector<double>(n, maxv));
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) cost[i][j] = maxv - score[i][j];
    auto sol = hungarian_min_cost(cost);
    sol.resize(r);
    for (int i = 0; i < r; ++i)
        if (sol[i] >= c) sol[i] = -1;
    return sol;
}

}  // namespace uqc
