#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace hybem::markov {

/// Continuous-time generator of a finite-state chain. Construction validates
/// shape, sign structure, zero row sums and irreducibility; a constructed
/// Generator is always usable.
class Generator {
 public:
  explicit Generator(Eigen::MatrixXd rates);

  [[nodiscard]] int state_count() const noexcept { return static_cast<int>(rates_.rows()); }
  [[nodiscard]] const Eigen::MatrixXd& rates() const noexcept { return rates_; }

 private:
  Eigen::MatrixXd rates_;
};

/// Unique stationary distribution, solved as a linear system with one
/// equation replaced by normalization. Entries are strictly positive and sum
/// to one.
Eigen::VectorXd stationary_distribution(const Generator& generator);

/// Dense matrix exponential, diagonal Pade order 6 with scaling and squaring.
Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a);

/// One-step transition matrix exp(rates * dt). Rows are cleaned up to exact
/// probability vectors; drift beyond 1e-9 per row is an error.
Eigen::MatrixXd transition_matrix(const Generator& generator, double dt);

/// Addressing for counter-based sampling: every path of an experiment draws
/// from its own logical stream of the master seed.
struct SeedRecord {
  std::uint64_t master_seed = 0;
  std::uint64_t path_index = 0;
};

/// Discrete-time chain skeleton. States are 1-based throughout the public
/// interface.
struct ChainPath {
  std::vector<int> states;  // length steps + 1
  double dt = 0.0;
  SeedRecord seed;
};

/// Samples steps transitions starting from initial_state. Pure function of
/// its arguments; identical inputs give identical paths.
ChainPath sample_chain(const Eigen::MatrixXd& transition, int initial_state, int steps, double dt,
                       SeedRecord seed);

struct CoupledChains {
  ChainPath a;
  ChainPath b;
  /// First index where the states meet; paths are identical from here on.
  std::optional<int> meeting_step;
};

/// Meeting coupling: both chains step with the same transition matrix from
/// independent draws until they first occupy the same state, then move
/// together forever.
CoupledChains couple_chains(const Eigen::MatrixXd& transition, int initial_a, int initial_b,
                            int steps, double dt, SeedRecord seed);

}  // namespace hybem::markov
