#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "hybem/errors.hpp"
#include "hybem/markov.hpp"
#include "hybem/model.hpp"
#include "hybem/rng.hpp"
#include "hybem/simulate.hpp"

using namespace hybem;

namespace {

Eigen::VectorXd scalar(double v) {
  Eigen::VectorXd x(1);
  x(0) = v;
  return x;
}

markov::Generator single_regime() { return markov::Generator(Eigen::MatrixXd::Zero(1, 1)); }

markov::Generator corrected_generator() {
  Eigen::MatrixXd g(2, 2);
  g << -4.0, 4.0, 1.0, -1.0;
  return markov::Generator(g);
}

model::HybridModel linear_drift() {
  return model::HybridModel(
      "linear", 1, 1, 1,
      [](const Eigen::VectorXd& x, int, Eigen::VectorXd& out) { out(0) = -x(0); },
      [](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = 0.0; },
      [](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = -1.0; });
}

model::HybridModel additive_noise(double sigma) {
  return model::HybridModel(
      "additive", 1, 1, 1,
      [](const Eigen::VectorXd&, int, Eigen::VectorXd& out) { out(0) = 0.0; },
      [sigma](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = sigma; },
      [](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = 0.0; });
}

// Drift is finite in regime 1 and NaN in regime 2: any path whose chain ever
// enters regime 2 fails at that step, everything else survives.
model::HybridModel regime_trap() {
  return model::HybridModel(
      "trap", 1, 1, 2,
      [](const Eigen::VectorXd& x, int regime, Eigen::VectorXd& out) {
        out(0) = regime == 1 ? -x(0) : std::numeric_limits<double>::quiet_NaN();
      },
      [](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = 0.1; });
}

}  // namespace

TEST_CASE("grid_step accepts multiples and rejects everything else") {
  CHECK(sim::grid_step(0.0, 0.01) == 0);
  CHECK(sim::grid_step(0.05, 0.01) == 5);
  CHECK(sim::grid_step(0.3, 0.01) == 30);
  CHECK(sim::grid_step(10.0, 0.01) == 1000);
  for (const double bad : {0.005, 0.0149, -0.01}) {
    try {
      sim::grid_step(bad, 0.01);
      FAIL("off-grid time accepted: ", bad);
    } catch (const Error& e) {
      CHECK(e.code() == Errc::off_grid_time);
    }
  }
}

TEST_CASE("drift-only linear model reproduces the closed-form iterates") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  const double dt = 0.1;
  const auto traj = sim::simulate(m, gen, scalar(2.0), 1, dt, 50, {123, 0});

  REQUIRE(traj.states.rows() == 51);
  REQUIRE(traj.chain.states.size() == 51);
  CHECK(traj.dt == dt);
  for (int k = 0; k <= 50; ++k) {
    const double expected = 2.0 / std::pow(1.0 + dt, k);
    CHECK(traj.states(k, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(traj.chain.states[static_cast<std::size_t>(k)] == 1);
  }
}

TEST_CASE("replay is deterministic") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const auto t1 = sim::simulate(m, gen, scalar(0.5), 2, 0.01, 500, {42, 7});
  const auto t2 = sim::simulate(m, gen, scalar(0.5), 2, 0.01, 500, {42, 7});
  CHECK(t1.states == t2.states);
  CHECK(t1.chain.states == t2.chain.states);
  for (int k = 0; k <= 500; ++k) CHECK(std::isfinite(t1.states(k, 0)));
}

TEST_CASE("drift-free path is the running sum of its scaled increments") {
  const double sigma = 0.7;
  const auto m = additive_noise(sigma);
  const auto gen = single_regime();
  const double dt = 0.01;
  const int steps = 40;
  const std::uint64_t seed = 99;
  const std::uint64_t path = 3;
  const auto traj = sim::simulate(m, gen, scalar(1.5), 1, dt, steps, {seed, path});

  double x = 1.5;
  const double root_dt = std::sqrt(dt);
  for (int k = 0; k < steps; ++k) {
    double z = 0.0;
    rng::fill_normals(seed, rng::Stream::noise, path, static_cast<std::uint64_t>(k), &z, 1);
    x += sigma * (z * root_dt);
    CHECK(traj.states(k + 1, 0) == doctest::Approx(x).epsilon(1e-14));
  }
}

TEST_CASE("terminal variance of the drift-free path matches the Gaussian law") {
  const double sigma = 0.5;
  const auto m = additive_noise(sigma);
  const auto gen = single_regime();
  const double dt = 0.01;
  const int steps = 100;
  const int paths = 4000;

  double sum = 0.0, sum_sq = 0.0;
  for (int p = 0; p < paths; ++p) {
    const auto traj =
        sim::simulate(m, gen, scalar(0.0), 1, dt, steps, {2024, static_cast<std::uint64_t>(p)});
    const double xk = traj.states(steps, 0);
    sum += xk;
    sum_sq += xk * xk;
  }
  const double mean = sum / paths;
  const double var = sum_sq / paths - mean * mean;
  const double expected = sigma * sigma * steps * dt;
  const double se = expected * std::sqrt(2.0 / (paths - 1));
  CHECK(std::abs(var - expected) <= 3.0 * se);
  CHECK(std::abs(mean) <= 3.0 * std::sqrt(expected / paths));
}

TEST_CASE("the cubic two-regime model stays finite over ten thousand steps") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const auto traj = sim::simulate(m, gen, scalar(0.5), 2, 0.01, 10000, {7, 0});
  double peak = 0.0;
  for (int k = 0; k <= 10000; ++k) {
    REQUIRE(std::isfinite(traj.states(k, 0)));
    peak = std::max(peak, std::abs(traj.states(k, 0)));
  }
  CHECK(peak < 50.0);
}

TEST_CASE("declared constants gate the step size unless overridden") {
  auto m = model::builtin_model("example41");
  m.declare_constants(model::example41_constants(m));
  const auto gen = corrected_generator();
  try {
    sim::simulate(m, gen, scalar(0.5), 2, 0.2, 10, {1, 0});
    FAIL("step size at the bound accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unstable_step);
  }
  sim::SimOptions opts;
  opts.allow_unstable_step = true;
  const auto traj = sim::simulate(m, gen, scalar(0.5), 2, 0.2, 10, {1, 0}, opts);
  CHECK(traj.states.rows() == 11);
}

TEST_CASE("coupling identical initial data gives identical paths") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const auto pair = sim::simulate_coupled(m, gen, scalar(0.5), 2, scalar(0.5), 2, 0.01, 300,
                                          {11, 4});
  REQUIRE(pair.meeting_step.has_value());
  CHECK(*pair.meeting_step == 0);
  CHECK(pair.a.states == pair.b.states);
  CHECK(pair.a.chain.states == pair.b.chain.states);
}

TEST_CASE("coupled linear drift contracts at the exact geometric rate") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  const double dt = 0.05;
  const auto pair = sim::simulate_coupled(m, gen, scalar(3.0), 1, scalar(-1.0), 1, dt, 80,
                                          {5, 0});
  for (int k = 0; k <= 80; ++k) {
    const double expected = 4.0 / std::pow(1.0 + dt, k);
    const double got = std::abs(pair.a.states(k, 0) - pair.b.states(k, 0));
    CHECK(got == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("shared increments cancel exactly in the drift-free difference") {
  const auto m = additive_noise(1.3);
  const auto gen = single_regime();
  const auto pair =
      sim::simulate_coupled(m, gen, scalar(2.0), 1, scalar(-0.5), 1, 0.01, 200, {8, 2});
  for (int k = 0; k <= 200; ++k)
    CHECK(pair.a.states(k, 0) - pair.b.states(k, 0) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("coupled chains reuse the chain coupling and path a matches a solo run") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const double dt = 0.01;
  const int steps = 400;
  const markov::SeedRecord seed{314, 9};
  const auto pair = sim::simulate_coupled(m, gen, scalar(0.5), 1, scalar(-2.0), 2, dt, steps,
                                          seed);
  const auto chains =
      markov::couple_chains(markov::transition_matrix(gen, dt), 1, 2, steps, dt, seed);
  CHECK(pair.a.chain.states == chains.a.states);
  CHECK(pair.b.chain.states == chains.b.states);
  CHECK(pair.meeting_step == chains.meeting_step);

  const auto solo = sim::simulate(m, gen, scalar(0.5), 1, dt, steps, seed);
  CHECK(pair.a.states == solo.states);
}

TEST_CASE("a one-path ensemble restricts the corresponding trajectory") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const double dt = 0.01;
  const std::vector<double> times{0.05, 0.1, 0.3};
  const auto snaps = sim::ensemble_snapshots(m, gen, scalar(0.5), 2, dt, times, 1, 606, 1);
  const auto traj = sim::simulate(m, gen, scalar(0.5), 2, dt, 30, {606, 0});

  REQUIRE(snaps.size() == 3);
  for (std::size_t s = 0; s < snaps.size(); ++s) {
    REQUIRE(snaps[s].states.rows() == 1);
    CHECK(snaps[s].step == sim::grid_step(times[s], dt));
    CHECK(snaps[s].states(0, 0) == traj.states(snaps[s].step, 0));
    CHECK(snaps[s].regimes[0] ==
          traj.chain.states[static_cast<std::size_t>(snaps[s].step)]);
    CHECK(snaps[s].path_ids == std::vector<std::int64_t>{0});
    CHECK(snaps[s].model_id == "example41");
    CHECK(snaps[s].requested_paths == 1);
    CHECK(snaps[s].master_seed == 606);
  }
}

TEST_CASE("a deterministic model collapses the ensemble to one atom value") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  const auto snaps = sim::ensemble_snapshots(m, gen, scalar(1.0), 1, 0.1, {0.5}, 64, 1, 2);
  REQUIRE(snaps.size() == 1);
  REQUIRE(snaps[0].states.rows() == 64);
  for (int r = 1; r < 64; ++r) CHECK(snaps[0].states(r, 0) == snaps[0].states(0, 0));
  CHECK(snaps[0].states(0, 0) == doctest::Approx(1.0 / std::pow(1.1, 5)).epsilon(1e-12));
}

TEST_CASE("ensembles are bit-identical across worker counts and reruns") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const std::vector<double> times{0.1, 0.5};
  const auto one = sim::ensemble_snapshots(m, gen, scalar(0.5), 2, 0.01, times, 300, 17, 1);
  const auto four = sim::ensemble_snapshots(m, gen, scalar(0.5), 2, 0.01, times, 300, 17, 4);
  const auto rerun = sim::ensemble_snapshots(m, gen, scalar(0.5), 2, 0.01, times, 300, 17, 4);
  REQUIRE(one.size() == 2);
  for (std::size_t s = 0; s < 2; ++s) {
    CHECK(one[s].states == four[s].states);
    CHECK(one[s].regimes == four[s].regimes);
    CHECK(one[s].path_ids == four[s].path_ids);
    CHECK(four[s].states == rerun[s].states);
  }
}

TEST_CASE("ensemble snapshot times must sit on the step grid") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  try {
    sim::ensemble_snapshots(m, gen, scalar(1.0), 1, 0.1, {0.25}, 8, 1, 1);
    FAIL("off-grid snapshot accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::off_grid_time);
  }
}

TEST_CASE("widespread path failures abort the ensemble") {
  const auto m = regime_trap();
  Eigen::MatrixXd rates(2, 2);
  rates << -2.0, 2.0, 2.0, -2.0;  // most chains reach regime 2 quickly
  const markov::Generator gen(rates);
  try {
    sim::ensemble_snapshots(m, gen, scalar(1.0), 1, 0.1, {1.0}, 200, 5, 1);
    FAIL("ensemble with massive failure rate did not abort");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::ensemble_failure);
  }
}

TEST_CASE("rare path failures are dropped and recorded by omission") {
  const auto m = regime_trap();
  Eigen::MatrixXd rates(2, 2);
  rates << -0.001, 0.001, 10.0, -10.0;
  const markov::Generator gen(rates);
  const double dt = 0.1;
  const int steps = 10;
  const std::int64_t paths = 2000;

  // Find a master seed whose chain ensemble trips one or two paths; the
  // failure budget for 2000 paths is exactly two.
  const auto tm = markov::transition_matrix(gen, dt);
  std::uint64_t master = 0;
  std::vector<std::int64_t> expected_failures;
  for (std::uint64_t candidate = 0; candidate < 400; ++candidate) {
    std::vector<std::int64_t> hits;
    for (std::int64_t p = 0; p < paths && hits.size() <= 3; ++p) {
      const auto chain =
          markov::sample_chain(tm, 1, steps, dt, {candidate, static_cast<std::uint64_t>(p)});
      for (std::size_t k = 1; k < chain.states.size(); ++k) {
        if (chain.states[k] == 2) {
          hits.push_back(p);
          break;
        }
      }
    }
    if (!hits.empty() && hits.size() <= 2) {
      master = candidate;
      expected_failures = hits;
      break;
    }
  }
  REQUIRE(!expected_failures.empty());

  const auto snaps = sim::ensemble_snapshots(m, gen, scalar(1.0), 1, dt, {1.0}, paths, master, 2);
  REQUIRE(snaps.size() == 1);
  CHECK(snaps[0].states.rows() ==
        paths - static_cast<std::int64_t>(expected_failures.size()));
  for (const auto bad : expected_failures) {
    for (const auto id : snaps[0].path_ids) CHECK(id != bad);
  }
  CHECK(snaps[0].requested_paths == paths);
}

TEST_CASE("second moments of the deterministic contraction follow the closed form") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  const double dt = 0.1;
  const auto series = sim::second_moment_series(m, gen, scalar(2.0), 1, dt, 40, 10, 3, 1);
  REQUIRE(series.value.size() == 41);
  CHECK(series.surviving_paths == 10);
  for (int k = 0; k <= 40; ++k) {
    const double expected = 4.0 / std::pow(1.0 + dt, 2 * k);
    CHECK(series.value[static_cast<std::size_t>(k)] ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("second moments of additive noise grow linearly in time") {
  const double sigma = 0.8;
  const auto m = additive_noise(sigma);
  const auto gen = single_regime();
  const double dt = 0.01;
  const int steps = 50;
  const std::int64_t paths = 2000;
  const double x0 = 1.0;
  const auto series =
      sim::second_moment_series(m, gen, scalar(x0), 1, dt, steps, paths, 404, 2);

  const double s2 = sigma * sigma * steps * dt;
  const double expected = x0 * x0 + s2;
  const double spread = std::sqrt((2.0 * s2 * s2 + 4.0 * x0 * x0 * s2) /
                                  static_cast<double>(paths));
  CHECK(std::abs(series.value.back() - expected) <= 4.0 * spread);
  CHECK(series.value.front() == doctest::Approx(x0 * x0));
}

TEST_CASE("moment series are bit-identical across worker counts") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const auto one = sim::second_moment_series(m, gen, scalar(0.5), 2, 0.01, 200, 260, 33, 1);
  const auto three = sim::second_moment_series(m, gen, scalar(0.5), 2, 0.01, 200, 260, 33, 3);
  CHECK(one.value == three.value);
  CHECK(one.surviving_paths == three.surviving_paths);
}

TEST_CASE("coupled decay of the linear model is the exact geometric sequence") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  const double dt = 0.05;
  const double p = 0.5;
  const auto series = sim::coupled_decay_series(m, gen, scalar(3.0), 1, scalar(-1.0), 1, p, dt,
                                                60, 8, 21, 1);
  REQUIRE(series.value.size() == 61);
  CHECK(series.met_by_end == 8);  // single regime: chains meet at index 0
  for (int k = 0; k <= 60; ++k) {
    const double expected = std::pow(4.0, p) / std::pow(1.0 + dt, p * k);
    CHECK(series.value[static_cast<std::size_t>(k)] ==
          doctest::Approx(expected).epsilon(1e-11));
  }
}

TEST_CASE("coupled decay of the cubic model trends down after burn-in") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const auto series = sim::coupled_decay_series(m, gen, scalar(0.5), 2, scalar(-3.0), 1, 0.5,
                                                0.01, 600, 400, 2718, 2);
  CHECK(series.surviving_paths == 400);
  CHECK(series.met_by_end > 350);  // fast chain: nearly every pair meets
  const auto window_mean = [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += series.value[k];
    return s / static_cast<double>(hi - lo);
  };
  const double early = window_mean(120, 360);
  const double late = window_mean(360, 601);
  CHECK(late < early);
  CHECK(series.value.back() < series.value[120]);
}

TEST_CASE("coupled decay series are bit-identical across worker counts") {
  const auto m = model::builtin_model("example41");
  const auto gen = corrected_generator();
  const auto one = sim::coupled_decay_series(m, gen, scalar(0.5), 2, scalar(-3.0), 1, 0.5, 0.01,
                                             150, 200, 55, 1);
  const auto four = sim::coupled_decay_series(m, gen, scalar(0.5), 2, scalar(-3.0), 1, 0.5, 0.01,
                                              150, 200, 55, 4);
  CHECK(one.value == four.value);
  CHECK(one.met_by_end == four.met_by_end);
}

TEST_CASE("simulator argument validation") {
  const auto m = linear_drift();
  const auto gen = single_regime();
  CHECK_THROWS_AS(sim::simulate(m, gen, Eigen::VectorXd::Zero(2), 1, 0.1, 10, {1, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(sim::simulate(m, gen, scalar(0.0), 2, 0.1, 10, {1, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(sim::simulate(m, gen, scalar(0.0), 1, -0.1, 10, {1, 0}),
                  std::invalid_argument);
  CHECK_THROWS_AS(sim::ensemble_snapshots(m, gen, scalar(0.0), 1, 0.1, {}, 8, 1, 1),
                  std::invalid_argument);
  try {
    sim::coupled_decay_series(m, gen, scalar(0.0), 1, scalar(1.0), 1, 0.0, 0.1, 10, 8, 1, 1);
    FAIL("p = 0 accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_p);
  }
}
