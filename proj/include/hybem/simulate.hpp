#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybem/bem.hpp"
#include "hybem/markov.hpp"
#include "hybem/model.hpp"

namespace hybem::sim {

struct SimOptions {
  bem::SolverOptions solver;
  /// Step sizes at or above 1/(n_M + 2) are rejected when the model declares
  /// constants; set this to run them anyway.
  bool allow_unstable_step = false;
};

/// One discretized path: states row k is X_k, chain holds r_0..r_K.
struct Trajectory {
  Eigen::MatrixXd states;  // (steps + 1) x state_dim
  markov::ChainPath chain;
  double dt = 0.0;
  markov::SeedRecord seed;
};

/// Two paths driven by identical Brownian increments whose chains follow the
/// meeting coupling.
struct CoupledPair {
  Trajectory a;
  Trajectory b;
  std::optional<int> meeting_step;
};

/// State atoms of the surviving ensemble paths at one grid time.
struct SnapshotEnsemble {
  double time = 0.0;
  std::int64_t step = 0;
  Eigen::MatrixXd states;              // surviving_paths x state_dim, path order
  std::vector<int> regimes;            // parallel to states rows
  std::vector<std::int64_t> path_ids;  // ascending
  std::string model_id;
  double dt = 0.0;
  std::int64_t requested_paths = 0;
  std::uint64_t master_seed = 0;
};

/// Per-step ensemble mean of |X_k|^2.
struct MomentSeries {
  std::vector<double> value;  // length steps + 1
  double dt = 0.0;
  std::int64_t requested_paths = 0;
  std::int64_t surviving_paths = 0;
};

/// Per-step ensemble mean of |X_k - Y_k|^p over coupled pairs.
struct DecaySeries {
  std::vector<double> value;  // length steps + 1
  double dt = 0.0;
  double p = 0.0;
  std::int64_t requested_paths = 0;
  std::int64_t surviving_paths = 0;
  std::int64_t met_by_end = 0;  // pairs whose chains met within the horizon
};

/// Maps t onto the step grid; off-grid times (beyond 1e-9 relative) are an
/// OffGridTime error, never rounded silently.
std::int64_t grid_step(double t, double dt);

/// One path of the scheme: the chain is sampled for the whole horizon first,
/// then per step v = X_k + g(X_k, r_k) dB_k and X_{k+1} solves the implicit
/// relation in regime r_{k+1}. Solver failures carry the step index.
Trajectory simulate(const model::HybridModel& model, const markov::Generator& generator,
                    const Eigen::VectorXd& x0, int i0, double dt, int steps,
                    const markov::SeedRecord& seed, const SimOptions& opts = {});

/// Two paths from (x0, i0) and (y0, j0) sharing Brownian increments, chains
/// from couple_chains. Path a is bit-identical to simulate() with the same
/// seed.
CoupledPair simulate_coupled(const model::HybridModel& model, const markov::Generator& generator,
                             const Eigen::VectorXd& x0, int i0, const Eigen::VectorXd& y0, int j0,
                             double dt, int steps, const markov::SeedRecord& seed,
                             const SimOptions& opts = {});

/// Runs `paths` independent paths and records state atoms at each requested
/// time. Per-path seeds derive from the master seed by path index, so the
/// result is bit-identical for any worker count. Paths whose solver fails are
/// dropped; more than 0.1% of them failing fails the run.
std::vector<SnapshotEnsemble> ensemble_snapshots(const model::HybridModel& model,
                                                 const markov::Generator& generator,
                                                 const Eigen::VectorXd& x0, int i0, double dt,
                                                 const std::vector<double>& times,
                                                 std::int64_t paths, std::uint64_t master_seed,
                                                 int workers, const SimOptions& opts = {});

/// Ensemble second moments per step, same worker-invariance and failure
/// policy as ensemble_snapshots. Partial sums reduce in fixed block order.
MomentSeries second_moment_series(const model::HybridModel& model,
                                  const markov::Generator& generator, const Eigen::VectorXd& x0,
                                  int i0, double dt, int steps, std::int64_t paths,
                                  std::uint64_t master_seed, int workers,
                                  const SimOptions& opts = {});

/// Ensemble mean of |X_k - Y_k|^p over coupled pairs, p > 0.
DecaySeries coupled_decay_series(const model::HybridModel& model,
                                 const markov::Generator& generator, const Eigen::VectorXd& x0,
                                 int i0, const Eigen::VectorXd& y0, int j0, double p, double dt,
                                 int steps, std::int64_t paths, std::uint64_t master_seed,
                                 int workers, const SimOptions& opts = {});

}  // namespace hybem::sim
