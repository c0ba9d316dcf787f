#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hybem/errors.hpp"
#include "hybem/measure.hpp"

namespace hybem::measure {

// Shortest augmenting paths with row/column potentials, one augmentation per
// row. Exact for any finite cost matrix; O(n^3) overall.
AssignmentResult solve_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (n < 1 || cost.cols() != n) throw std::invalid_argument("cost matrix must be square");
  if (!cost.allFinite())
    throw Error(Errc::non_finite_evaluation, "cost matrix has non-finite entries");

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-indexed; p[j] = row currently matched to column j, column 0 is virtual.
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> minv(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)] != 0) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)] != 0) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  AssignmentResult out;
  out.col_of_row.assign(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= n; ++j) {
    const int row = p[static_cast<std::size_t>(j)];
    out.col_of_row[static_cast<std::size_t>(row) - 1] = j - 1;
    out.cost += cost(row - 1, j - 1);
  }
  return out;
}

}  // namespace hybem::measure
