#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace oracles {

Eigen::Matrix2d two_state_transition(double alpha, double beta, double t) {
  const double s = alpha + beta;
  const double e = std::exp(-s * t);
  Eigen::Matrix2d p;
  p(0, 0) = (beta + alpha * e) / s;
  p(0, 1) = (alpha - alpha * e) / s;
  p(1, 0) = (beta - beta * e) / s;
  p(1, 1) = (alpha + beta * e) / s;
  return p;
}

double bisection_root(const std::function<double(double)>& g, double target, double lo, double hi,
                      double tol) {
  double glo = g(lo);
  double ghi = g(hi);
  if (!(glo <= target && target <= ghi)) throw std::runtime_error("oracle bracket invalid");
  for (int i = 0; i < 500; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double gm = g(mid);
    if (std::abs(gm - target) <= tol && hi - lo <= 1e-13 * (1.0 + std::abs(mid))) return mid;
    if (gm < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double brute_force_assignment(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  if (n > 8 || cost.cols() != n) throw std::runtime_error("oracle limited to square n <= 8");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost(i, perm[static_cast<std::size_t>(i)]);
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

double ks_statistic_direct(std::vector<double> a, std::vector<double> b) {
  std::vector<double> pooled = a;
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ecdf = [](const std::vector<double>& sample, double x) {
    std::size_t count = 0;
    for (double v : sample)
      if (v <= x) ++count;
    return static_cast<double>(count) / static_cast<double>(sample.size());
  };
  double d = 0.0;
  for (double x : pooled) d = std::max(d, std::abs(ecdf(a, x) - ecdf(b, x)));
  return d;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double kolmogorov_q_direct(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  const auto l = static_cast<long double>(lambda);
  long double sum = 0.0L;
  long double sign = 1.0L;
  for (int j = 1; j <= 300; ++j) {
    const long double term = std::exp(-2.0L * j * j * l * l);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-30L && j > 8) break;
  }
  long double q = 2.0L * sum;
  if (q < 0.0L) q = 0.0L;
  if (q > 1.0L) q = 1.0L;
  return static_cast<double>(q);
}

}  // namespace oracles
