#include "hybem/markov.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "hybem/errors.hpp"
#include "hybem/rng.hpp"

namespace hybem::markov {
namespace {

constexpr double kRowSumTolerance = 1e-12;
constexpr double kProbabilityDrift = 1e-9;

std::string entry_name(const char* what, int i, int j) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s(%d,%d)", what, i + 1, j + 1);
  return buf;
}

// Forward reachability over edges with positive rate; used twice (original
// and transposed) to decide strong connectivity.
std::vector<bool> reachable_from_first(const Eigen::MatrixXd& rates, bool transposed) {
  const int n = static_cast<int>(rates.rows());
  std::vector<bool> seen(n, false);
  std::vector<int> stack = {0};
  seen[0] = true;
  while (!stack.empty()) {
    const int i = stack.back();
    stack.pop_back();
    for (int j = 0; j < n; ++j) {
      const double rate = transposed ? rates(j, i) : rates(i, j);
      if (i != j && rate > 0.0 && !seen[j]) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  return seen;
}

int next_state(const Eigen::MatrixXd& transition, int current, double u) {
  const int n = static_cast<int>(transition.rows());
  double cum = 0.0;
  for (int j = 0; j < n; ++j) {
    cum += transition(current - 1, j);
    if (u <= cum) return j + 1;
  }
  return n;  // u beyond accumulated mass by rounding
}

void validate_transition(const Eigen::MatrixXd& transition) {
  if (transition.rows() != transition.cols() || transition.rows() < 1)
    throw std::invalid_argument("transition matrix must be square and nonempty");
  for (int i = 0; i < transition.rows(); ++i) {
    if (std::abs(transition.row(i).sum() - 1.0) > 1e-6)
      throw std::invalid_argument("transition matrix row " + std::to_string(i + 1) +
                                  " is not a probability vector");
  }
}

}  // namespace

Generator::Generator(Eigen::MatrixXd rates) : rates_(std::move(rates)) {
  if (rates_.rows() != rates_.cols() || rates_.rows() < 1)
    throw std::invalid_argument("generator must be a square nonempty matrix");
  const int n = static_cast<int>(rates_.rows());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && rates_(i, j) < 0.0)
        throw Error(Errc::negative_off_diagonal,
                    entry_name("rate", i, j) + " = " + std::to_string(rates_(i, j)));
    }
    const double sum = rates_.row(i).sum();
    if (std::abs(sum) > kRowSumTolerance)
      throw Error(Errc::row_sum_nonzero,
                  "row " + std::to_string(i + 1) + " sums to " + std::to_string(sum));
  }
  if (n > 1) {
    const auto forward = reachable_from_first(rates_, false);
    const auto backward = reachable_from_first(rates_, true);
    for (int j = 0; j < n; ++j) {
      if (!forward[j])
        throw Error(Errc::reducible,
                    "state " + std::to_string(j + 1) + " is not reachable from state 1");
      if (!backward[j])
        throw Error(Errc::reducible,
                    "state 1 is not reachable from state " + std::to_string(j + 1));
    }
  }
}

Eigen::VectorXd stationary_distribution(const Generator& generator) {
  const int n = generator.state_count();
  if (n == 1) return Eigen::VectorXd::Ones(1);

  // mu * rates = 0 transposed, with the last equation swapped for sum(mu) = 1.
  Eigen::MatrixXd system = generator.rates().transpose();
  system.row(n - 1).setOnes();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs(n - 1) = 1.0;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
  if (!lu.isInvertible())
    throw Error(Errc::singular_system, "stationary equations are singular");
  Eigen::VectorXd mu = lu.solve(rhs);

  for (int i = 0; i < n; ++i)
    if (!(mu(i) > 0.0))
      throw Error(Errc::singular_system,
                  "stationary solve produced non-positive mass at state " + std::to_string(i + 1));
  mu /= mu.sum();

  const double residual = (mu.transpose() * generator.rates()).cwiseAbs().maxCoeff();
  if (residual > 1e-10)
    throw Error(Errc::singular_system,
                "stationary residual " + std::to_string(residual) + " exceeds tolerance");
  return mu;
}

Eigen::MatrixXd matrix_exponential(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("matrix exponential needs a square matrix");
  const int n = static_cast<int>(a.rows());
  const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(n, n);

  // Diagonal Pade (6,6) coefficients.
  static constexpr double c[7] = {1.0,       1.0 / 2.0,     5.0 / 44.0,    1.0 / 66.0,
                                  1.0 / 792, 1.0 / 15840.0, 1.0 / 665280.0};

  const double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > 0.25) squarings = static_cast<int>(std::ceil(std::log2(norm / 0.25)));

  const Eigen::MatrixXd scaled = a / std::pow(2.0, squarings);
  const Eigen::MatrixXd s2 = scaled * scaled;
  const Eigen::MatrixXd s4 = s2 * s2;
  const Eigen::MatrixXd s6 = s4 * s2;

  const Eigen::MatrixXd even = c[0] * identity + c[2] * s2 + c[4] * s4 + c[6] * s6;
  const Eigen::MatrixXd odd_base = c[1] * identity + c[3] * s2 + c[5] * s4;
  const Eigen::MatrixXd odd = scaled * odd_base;

  // numerator = even + odd, denominator = even - odd
  Eigen::FullPivLU<Eigen::MatrixXd> lu(even - odd);
  if (!lu.isInvertible())
    throw Error(Errc::singular_system, "Pade denominator is singular");
  Eigen::MatrixXd result = lu.solve(even + odd);

  for (int s = 0; s < squarings; ++s) result = result * result;
  return result;
}

Eigen::MatrixXd transition_matrix(const Generator& generator, double dt) {
  if (!(dt >= 0.0) || !std::isfinite(dt))
    throw std::invalid_argument("step size must be finite and nonnegative");
  Eigen::MatrixXd p = matrix_exponential(generator.rates() * dt);

  const int n = generator.state_count();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (p(i, j) < 0.0) {
        if (p(i, j) < -kProbabilityDrift)
          throw Error(Errc::no_convergence,
                      "transition " + entry_name("p", i, j) + " = " + std::to_string(p(i, j)));
        p(i, j) = 0.0;
      }
    }
    const double sum = p.row(i).sum();
    if (std::abs(sum - 1.0) > kProbabilityDrift)
      throw Error(Errc::no_convergence,
                  "transition row " + std::to_string(i + 1) + " sums to " + std::to_string(sum));
    p.row(i) /= sum;
  }
  return p;
}

ChainPath sample_chain(const Eigen::MatrixXd& transition, int initial_state, int steps, double dt,
                       SeedRecord seed) {
  validate_transition(transition);
  const int n = static_cast<int>(transition.rows());
  if (initial_state < 1 || initial_state > n)
    throw std::invalid_argument("initial state " + std::to_string(initial_state) +
                                " outside 1.." + std::to_string(n));
  if (steps < 0) throw std::invalid_argument("steps must be nonnegative");

  ChainPath path;
  path.dt = dt;
  path.seed = seed;
  path.states.resize(static_cast<std::size_t>(steps) + 1);
  path.states[0] = initial_state;
  for (int k = 1; k <= steps; ++k) {
    const double u = rng::uniform(seed.master_seed, rng::Stream::chain, seed.path_index,
                                  static_cast<std::uint64_t>(k), 0);
    path.states[static_cast<std::size_t>(k)] =
        next_state(transition, path.states[static_cast<std::size_t>(k) - 1], u);
  }
  return path;
}

CoupledChains couple_chains(const Eigen::MatrixXd& transition, int initial_a, int initial_b,
                            int steps, double dt, SeedRecord seed) {
  CoupledChains pair;
  pair.a = sample_chain(transition, initial_a, steps, dt, seed);

  const int n = static_cast<int>(transition.rows());
  if (initial_b < 1 || initial_b > n)
    throw std::invalid_argument("initial state " + std::to_string(initial_b) + " outside 1.." +
                                std::to_string(n));

  pair.b.dt = dt;
  pair.b.seed = seed;
  pair.b.states.resize(pair.a.states.size());
  pair.b.states[0] = initial_b;
  if (initial_b == initial_a) pair.meeting_step = 0;

  for (int k = 1; k <= steps; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    if (pair.meeting_step) {
      pair.b.states[idx] = pair.a.states[idx];
      continue;
    }
    const double u = rng::uniform(seed.master_seed, rng::Stream::chain_partner, seed.path_index,
                                  static_cast<std::uint64_t>(k), 0);
    pair.b.states[idx] = next_state(transition, pair.b.states[idx - 1], u);
    if (pair.b.states[idx] == pair.a.states[idx]) pair.meeting_step = k;
  }
  return pair;
}

}  // namespace hybem::markov
