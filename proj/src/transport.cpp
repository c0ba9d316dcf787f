#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hybem/errors.hpp"
#include "hybem/measure.hpp"

namespace hybem::measure {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMassDust = 1e-14;       // remaining mass treated as rounding
constexpr double kCertificateTol = 1e-9;  // dual feasibility slack
constexpr double kMarginalTol = 1e-10;

}  // namespace

// Successive shortest augmenting paths with node potentials on the dense
// bipartite graph. Each augmentation zeroes at least one remaining supply or
// demand, so at most na + nb rounds run; the final flow is checked against
// its own dual certificate (nonnegative reduced costs, tight on support).
TransportResult solve_transport(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                                const Eigen::VectorXd& demand) {
  const int na = static_cast<int>(cost.rows());
  const int nb = static_cast<int>(cost.cols());
  if (na < 1 || nb < 1) throw std::invalid_argument("cost matrix must be nonempty");
  if (supply.size() != na || demand.size() != nb)
    throw std::invalid_argument("supply/demand sizes must match the cost matrix");
  if (!cost.allFinite())
    throw Error(Errc::non_finite_evaluation, "cost matrix has non-finite entries");
  if ((supply.array() <= 0.0).any() || (demand.array() <= 0.0).any())
    throw std::invalid_argument("supply and demand entries must be positive");
  if (std::abs(supply.sum() - demand.sum()) > 1e-9)
    throw std::invalid_argument("supply and demand must carry equal total mass");

  Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(na, nb);
  Eigen::VectorXd rem_s = supply;
  Eigen::VectorXd rem_d = demand;
  std::vector<double> pot(static_cast<std::size_t>(na + nb), 0.0);  // left then right
  std::vector<double> dist(static_cast<std::size_t>(na + nb), 0.0);
  std::vector<int> parent(static_cast<std::size_t>(na + nb), -1);
  std::vector<char> done(static_cast<std::size_t>(na + nb), 0);

  const auto reduced_fwd = [&](int i, int j) {
    return cost(i, j) + pot[static_cast<std::size_t>(i)] -
           pot[static_cast<std::size_t>(na + j)];
  };

  for (int round = 0; round < na + nb + 2; ++round) {
    if (rem_d.maxCoeff() <= kMassDust) break;

    // Multi-source Dijkstra from every left node with remaining supply.
    for (int v = 0; v < na + nb; ++v) {
      dist[static_cast<std::size_t>(v)] = v < na && rem_s(v) > kMassDust ? 0.0 : kInf;
      parent[static_cast<std::size_t>(v)] = -1;
      done[static_cast<std::size_t>(v)] = 0;
    }
    int target = -1;
    for (;;) {
      int best = -1;
      double best_d = kInf;
      for (int v = 0; v < na + nb; ++v) {
        if (done[static_cast<std::size_t>(v)] == 0 &&
            dist[static_cast<std::size_t>(v)] < best_d) {
          best_d = dist[static_cast<std::size_t>(v)];
          best = v;
        }
      }
      if (best < 0) break;
      done[static_cast<std::size_t>(best)] = 1;
      if (best >= na && rem_d(best - na) > kMassDust) {
        target = best;
        break;
      }
      if (best < na) {
        const int i = best;
        for (int j = 0; j < nb; ++j) {
          const double cand = best_d + reduced_fwd(i, j);
          if (cand < dist[static_cast<std::size_t>(na + j)]) {
            dist[static_cast<std::size_t>(na + j)] = cand;
            parent[static_cast<std::size_t>(na + j)] = i;
          }
        }
      } else {
        const int j = best - na;
        for (int i = 0; i < na; ++i) {
          if (flow(i, j) <= 0.0) continue;
          const double cand = best_d - reduced_fwd(i, j);
          if (cand < dist[static_cast<std::size_t>(i)]) {
            dist[static_cast<std::size_t>(i)] = cand;
            parent[static_cast<std::size_t>(i)] = na + j;
          }
        }
      }
    }

    if (target < 0) {
      // No augmenting path: legitimate only once rounding dust is left.
      if (rem_d.maxCoeff() > 1e-12)
        throw Error(Errc::no_convergence, "transport ran out of augmenting paths");
      break;
    }

    // Walk back to the originating source, collecting the bottleneck.
    const double d_t = dist[static_cast<std::size_t>(target)];
    double amount = rem_d(target - na);
    int v = target;
    while (parent[static_cast<std::size_t>(v)] >= 0) {
      const int w = parent[static_cast<std::size_t>(v)];
      // Forward arcs (w left, v right) are uncapacitated; backward arcs are
      // bounded by the flow they undo.
      if (v < na) amount = std::min(amount, flow(v, w - na));
      v = w;
    }
    amount = std::min(amount, rem_s(v));

    int origin = v;
    v = target;
    while (parent[static_cast<std::size_t>(v)] >= 0) {
      const int w = parent[static_cast<std::size_t>(v)];
      if (v >= na)
        flow(w, v - na) += amount;
      else
        flow(v, w - na) -= amount;
      v = w;
    }
    rem_s(origin) -= amount;
    rem_d(target - na) -= amount;

    for (int node = 0; node < na + nb; ++node)
      pot[static_cast<std::size_t>(node)] += std::min(dist[static_cast<std::size_t>(node)], d_t);
  }

  // Dual certificate: every arc's reduced cost nonnegative, tight wherever
  // flow runs; marginals reproduce the inputs.
  for (int i = 0; i < na; ++i) {
    for (int j = 0; j < nb; ++j) {
      const double rc = reduced_fwd(i, j);
      if (rc < -kCertificateTol)
        throw Error(Errc::no_convergence, "transport dual certificate violated");
      if (flow(i, j) > 1e-12 && std::abs(rc) > kCertificateTol)
        throw Error(Errc::no_convergence, "transport support not tight against the dual");
    }
  }
  if ((flow.rowwise().sum() - supply).cwiseAbs().maxCoeff() > kMarginalTol ||
      (flow.colwise().sum().transpose() - demand).cwiseAbs().maxCoeff() > kMarginalTol)
    throw Error(Errc::no_convergence, "transport marginals drifted from the inputs");

  TransportResult out;
  out.cost = (flow.array() * cost.array()).sum();
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j)
      if (flow(i, j) > 0.0) out.plan.push_back({i, j, flow(i, j)});
  return out;
}

}  // namespace hybem::measure
