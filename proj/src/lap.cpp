#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "biotk/track.hpp"

namespace biotk {

namespace {

constexpr double kBig = 1e12; // stand-in for forbidden pairs during relaxation

// Shortest-augmenting-path assignment with dual potentials, n rows <= m cols.
// Returns row -> col.
std::vector<int> solve_rows_le_cols(const std::vector<std::vector<double>>& a,
                                    std::size_t n, std::size_t m) {
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        p[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(m + 1, inf);
        std::vector<bool> used(m + 1, false);
        do {
            used[j0] = true;
            const std::size_t i0 = p[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double c = a[i0 - 1][j - 1];
                if (std::isinf(c)) c = kBig;
                const double cur = c - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (std::size_t j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = static_cast<int>(j - 1);
    return row_to_col;
}

} // namespace

std::vector<std::pair<std::size_t, std::size_t>> linear_assignment(
    const std::vector<std::vector<double>>& cost) {
    const std::size_t n = cost.size();
    if (n == 0) return {};
    const std::size_t m = cost.front().size();
    if (m == 0) return {};
    for (const auto& row : cost)
        if (row.size() != m) throw ShapeError("ragged cost matrix");

    std::vector<std::pair<std::size_t, std::size_t>> out;
    if (n <= m) {
        auto rc = solve_rows_le_cols(cost, n, m);
        for (std::size_t i = 0; i < n; ++i)
            if (rc[i] >= 0 && std::isfinite(cost[i][static_cast<std::size_t>(rc[i])]))
                out.emplace_back(i, static_cast<std::size_t>(rc[i]));
    } else {
        std::vector<std::vector<double>> t(m, std::vector<double>(n));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) t[j][i] = cost[i][j];
        auto rc = solve_rows_le_cols(t, m, n);
        for (std::size_t j = 0; j < m; ++j)
            if (rc[j] >= 0 && std::isfinite(cost[static_cast<std::size_t>(rc[j])][j]))
                out.emplace_back(static_cast<std::size_t>(rc[j]), j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace biotk
