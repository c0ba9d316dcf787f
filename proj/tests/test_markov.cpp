#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hybem/errors.hpp"
#include "hybem/markov.hpp"
#include "hybem/rng.hpp"
#include "oracles.hpp"

using namespace hybem;
using markov::Generator;

namespace {

Eigen::MatrixXd two_state(double alpha, double beta) {
  Eigen::MatrixXd g(2, 2);
  g << -alpha, alpha, beta, -beta;
  return g;
}

// Random valid generator: positive off-diagonals, rows zeroed through the
// diagonal. Strictly positive rates keep it irreducible.
Eigen::MatrixXd random_generator(int n, std::uint64_t seed) {
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i) {
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      g(i, j) = 0.1 + 2.0 * rng::uniform(seed, rng::Stream::scan, static_cast<std::uint64_t>(i),
                                         static_cast<std::uint64_t>(j), 0);
      row += g(i, j);
    }
    g(i, i) = -row;
  }
  return g;
}

}  // namespace

TEST_CASE("generator validation rejects malformed rate matrices") {
  Eigen::MatrixXd negative(2, 2);
  negative << -1.0, 1.0, -0.5, 0.5;
  try {
    Generator g{negative};
    FAIL("negative off-diagonal accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::negative_off_diagonal);
    CHECK(std::string(e.what()).find("rate(2,1)") != std::string::npos);
  }

  Eigen::MatrixXd drifted(2, 2);
  drifted << -1.0, 1.0 + 1e-9, 3.0, -3.0;
  try {
    Generator g{drifted};
    FAIL("row-sum drift accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::row_sum_nonzero);
  }

  // Two components: {1,2} and {3}.
  Eigen::MatrixXd split = Eigen::MatrixXd::Zero(3, 3);
  split(0, 1) = 1.0;
  split(0, 0) = -1.0;
  split(1, 0) = 2.0;
  split(1, 1) = -2.0;
  try {
    Generator g{split};
    FAIL("reducible generator accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::reducible);
    CHECK(std::string(e.what()).find("state 3") != std::string::npos);
  }
}

TEST_CASE("generator accepts valid matrices including the single-state chain") {
  CHECK_NOTHROW(Generator{two_state(1.0, 3.0)});
  CHECK_NOTHROW(Generator{Eigen::MatrixXd::Zero(1, 1)});
}

TEST_CASE("stationary distribution matches hand-solved chains") {
  const auto mu_a = markov::stationary_distribution(Generator{two_state(1.0, 3.0)});
  CHECK(std::abs(mu_a(0) - 0.75) < 1e-12);
  CHECK(std::abs(mu_a(1) - 0.25) < 1e-12);

  const auto mu_b = markov::stationary_distribution(Generator{two_state(4.0, 1.0)});
  CHECK(std::abs(mu_b(0) - 0.2) < 1e-12);
  CHECK(std::abs(mu_b(1) - 0.8) < 1e-12);

  const auto mu_c = markov::stationary_distribution(Generator{two_state(1.0, 1.0)});
  CHECK(std::abs(mu_c(0) - 0.5) < 1e-12);

  // Cyclic 3-state chain with unit rates is uniform by symmetry.
  Eigen::MatrixXd cycle = Eigen::MatrixXd::Zero(3, 3);
  cycle(0, 1) = 1.0;
  cycle(1, 2) = 1.0;
  cycle(2, 0) = 1.0;
  cycle.diagonal().setConstant(-1.0);
  const auto mu_d = markov::stationary_distribution(Generator{cycle});
  for (int i = 0; i < 3; ++i) CHECK(std::abs(mu_d(i) - 1.0 / 3.0) < 1e-12);

  const auto mu_single = markov::stationary_distribution(Generator{Eigen::MatrixXd::Zero(1, 1)});
  CHECK(mu_single(0) == 1.0);
}

TEST_CASE("stationary distribution solves mu G = 0 on random generators") {
  for (int n : {2, 3, 5, 8}) {
    const Generator g{random_generator(n, static_cast<std::uint64_t>(100 + n))};
    const auto mu = markov::stationary_distribution(g);
    CHECK(std::abs(mu.sum() - 1.0) < 1e-12);
    CHECK(mu.minCoeff() > 0.0);
    CHECK((mu.transpose() * g.rates()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("matrix exponential agrees with closed forms") {
  // Known nilpotent case: exp([[0,1],[0,0]]) = [[1,1],[0,1]].
  Eigen::MatrixXd nilpotent = Eigen::MatrixXd::Zero(2, 2);
  nilpotent(0, 1) = 1.0;
  const auto en = markov::matrix_exponential(nilpotent);
  CHECK(std::abs(en(0, 0) - 1.0) < 1e-14);
  CHECK(std::abs(en(0, 1) - 1.0) < 1e-14);
  CHECK(std::abs(en(1, 0)) < 1e-14);

  // Diagonal case.
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(2, 2);
  diag(0, 0) = 1.5;
  diag(1, 1) = -3.0;
  const auto ed = markov::matrix_exponential(diag);
  CHECK(ed(0, 0) == doctest::Approx(std::exp(1.5)).epsilon(1e-13));
  CHECK(ed(1, 1) == doctest::Approx(std::exp(-3.0)).epsilon(1e-13));
  CHECK(std::abs(ed(0, 1)) < 1e-14);
}

TEST_CASE("transition matrix matches the 2-state closed form across step sizes") {
  const Generator g{two_state(1.0, 3.0)};
  for (double dt : {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.25, 0.5, 1.0}) {
    const auto p = markov::transition_matrix(g, dt);
    const auto expected = oracles::two_state_transition(1.0, 3.0, dt);
    CHECK((p - expected).cwiseAbs().maxCoeff() < 1e-12);
  }
  const auto identity = markov::transition_matrix(g, 0.0);
  CHECK((identity - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("transition matrices are stochastic and satisfy the semigroup property") {
  for (int n : {2, 4, 6}) {
    const Generator g{random_generator(n, static_cast<std::uint64_t>(7 * n))};
    const auto p1 = markov::transition_matrix(g, 0.3);
    const auto p2 = markov::transition_matrix(g, 0.7);
    const auto p3 = markov::transition_matrix(g, 1.0);
    CHECK(((p1 * p2) - p3).cwiseAbs().maxCoeff() < 1e-10);
    for (int i = 0; i < n; ++i) {
      CHECK(std::abs(p3.row(i).sum() - 1.0) < 1e-12);
      CHECK(p3.row(i).minCoeff() >= 0.0);
      CHECK(p3.row(i).maxCoeff() <= 1.0);
    }

    // The stationary law is a fixed point of every skeleton.
    const auto mu = markov::stationary_distribution(g);
    CHECK((mu.transpose() * p2 - mu.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("sample_chain is pure, respects bounds and starts where told") {
  const Generator g{two_state(1.0, 3.0)};
  const auto tm = markov::transition_matrix(g, 0.1);

  const auto path = markov::sample_chain(tm, 2, 50, 0.1, {42, 0});
  const auto again = markov::sample_chain(tm, 2, 50, 0.1, {42, 0});
  CHECK(path.states == again.states);
  CHECK(path.states.size() == 51);
  CHECK(path.states[0] == 2);
  for (int s : path.states) {
    CHECK(s >= 1);
    CHECK(s <= 2);
  }
  CHECK(path.dt == 0.1);

  const auto trivial = markov::sample_chain(tm, 1, 0, 0.1, {42, 0});
  CHECK(trivial.states == std::vector<int>{1});

  // Different path index gives a different trajectory stream.
  const auto other = markov::sample_chain(tm, 2, 50, 0.1, {42, 1});
  CHECK(path.states != other.states);
}

TEST_CASE("long chain occupancy approaches the stationary distribution") {
  const Generator g{two_state(1.0, 3.0)};
  const auto tm = markov::transition_matrix(g, 0.1);
  const int steps = 200000;
  const auto path = markov::sample_chain(tm, 2, steps, 0.1, {2718, 0});
  std::size_t in_state_1 = 0;
  for (int s : path.states)
    if (s == 1) ++in_state_1;
  const double fraction = static_cast<double>(in_state_1) / static_cast<double>(path.states.size());
  CHECK(fraction == doctest::Approx(0.75).epsilon(0.02));
}

TEST_CASE("couple_chains meets exactly at the first common state and merges") {
  const Generator g{two_state(1.0, 3.0)};
  const auto tm = markov::transition_matrix(g, 0.1);

  int met = 0;
  for (std::uint64_t path_index = 0; path_index < 200; ++path_index) {
    const auto pair = markov::couple_chains(tm, 1, 2, 120, 0.1, {909, path_index});
    REQUIRE(pair.a.states.size() == pair.b.states.size());

    // Direct scan oracle for the meeting index.
    std::optional<int> first_match;
    for (std::size_t k = 0; k < pair.a.states.size(); ++k) {
      if (pair.a.states[k] == pair.b.states[k]) {
        first_match = static_cast<int>(k);
        break;
      }
    }
    CHECK(pair.meeting_step == first_match);
    if (pair.meeting_step) {
      ++met;
      for (std::size_t k = static_cast<std::size_t>(*pair.meeting_step); k < pair.a.states.size();
           ++k)
        CHECK(pair.a.states[k] == pair.b.states[k]);
    }
  }
  // Meeting is overwhelmingly likely over 120 steps of this fast-mixing chain.
  CHECK(met >= 190);

  const auto same = markov::couple_chains(tm, 2, 2, 30, 0.1, {909, 0});
  CHECK(same.meeting_step == 0);
  CHECK(same.a.states == same.b.states);
}

TEST_CASE("coupled partner is unaffected by the primary path after the merge") {
  // The partner consumes its own stream before tau, so path a equals the
  // singly-sampled chain with the same seed record.
  const Generator g{two_state(1.0, 3.0)};
  const auto tm = markov::transition_matrix(g, 0.05);
  const auto pair = markov::couple_chains(tm, 1, 2, 80, 0.05, {5150, 3});
  const auto solo = markov::sample_chain(tm, 1, 80, 0.05, {5150, 3});
  CHECK(pair.a.states == solo.states);
}
