#pragma once

#include <limits>
#include <vector>

#include "tensor.hpp"

namespace bidpm {

struct AssignmentResult {
    std::vector<std::size_t> col_of_row;  // column matched to each row
    double cost = 0.0;
};

/// Exact minimum-cost assignment of rows to distinct columns of a cost
/// matrix [m, n] with m <= n, by shortest augmenting paths over dual
/// potentials (the O(m n^2) Hungarian scheme). Deterministic: ties are broken
/// by the lowest column index scanned first.
inline AssignmentResult solve_assignment(const Tensor& cost) {
    detail::require_rank2(cost, "solve_assignment");
    const std::size_t m = cost.rows();
    const std::size_t n = cost.cols();
    if (m == 0 || n == 0) throw Error("solve_assignment: empty cost matrix");
    if (m > n) throw Error("solve_assignment: more rows than columns");
    detail::ensure_finite(cost, "solve_assignment");

    constexpr double kInf = std::numeric_limits<double>::infinity();
    // 1-based internally; index 0 is the virtual start column.
    std::vector<double> u(m + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0);  // row matched to column, 0 = free
    std::vector<std::size_t> way(n + 1, 0);

    for (std::size_t i = 1; i <= m; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = kInf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    AssignmentResult res;
    res.col_of_row.assign(m, 0);
    for (std::size_t j = 1; j <= n; ++j)
        if (match[j] != 0) res.col_of_row[match[j] - 1] = j - 1;
    for (std::size_t i = 0; i < m; ++i) res.cost += cost(i, res.col_of_row[i]);
    return res;
}

}  // namespace bidpm
