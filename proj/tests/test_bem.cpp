#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>

#include "hybem/bem.hpp"
#include "hybem/errors.hpp"
#include "hybem/model.hpp"
#include "hybem/rng.hpp"
#include "oracles.hpp"

using namespace hybem;

namespace {

Eigen::VectorXd scalar(double v) {
  Eigen::VectorXd x(1);
  x(0) = v;
  return x;
}

model::HybridModel zero_drift_model() {
  return model::HybridModel(
      "zero", 1, 1, 1, [](const Eigen::VectorXd&, int, Eigen::VectorXd& out) { out(0) = 0.0; },
      [](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = 1.0; });
}

model::HybridModel linear_model(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  return model::HybridModel(
      "linear", n, n, 1,
      [a](const Eigen::VectorXd& x, int, Eigen::VectorXd& out) { out = a * x; },
      [n](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) {
        out = Eigen::MatrixXd::Identity(n, n);
      },
      [a](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out = a; });
}

// Solve Example 4.1's implicit relation with a plain bisection; the bracket
// [-12, 12] covers every problem the tests generate.
double cubic_oracle(double v, int regime, double dt) {
  const auto g = [&](double u) {
    const double f = regime == 1 ? 1.0 + u - 10.0 * u * u * u : 1.0 - 2.0 * u - 11.0 * u * u * u;
    return u - dt * f;
  };
  return oracles::bisection_root(g, v, -12.0, 12.0, 1e-13);
}

double residual_of(const model::HybridModel& m, double u, int regime, double dt, double v) {
  return std::abs(u - dt * m.drift(scalar(u), regime)(0) - v);
}

}  // namespace

TEST_CASE("implicit step with zero drift is the identity") {
  const auto m = zero_drift_model();
  bem::StepProblem p{&m, scalar(0.7), 1, 0.05};
  const auto u = bem::implicit_step(p, {});
  CHECK(u(0) == 0.7);
}

TEST_CASE("implicit step solves the scalar linear problem in closed form") {
  Eigen::MatrixXd a(1, 1);
  a(0, 0) = -1.0;
  const auto m = linear_model(a);
  bem::StepProblem p{&m, scalar(1.0), 1, 0.1};
  bem::SolveStats stats;
  const auto u = bem::implicit_step(p, {}, &stats);
  CHECK(u(0) == doctest::Approx(1.0 / 1.1).epsilon(1e-13));
  CHECK(stats.newton_iterations <= 1);  // linear maps need a single update
  CHECK_FALSE(stats.used_fallback);
}

TEST_CASE("implicit step matches a dense solve for multivariate linear drift") {
  Eigen::MatrixXd a(2, 2);
  a << -2.0, 0.5, 0.3, -1.0;
  const auto m = linear_model(a);
  Eigen::VectorXd v(2);
  v << 1.0, -0.5;
  const double dt = 0.05;
  bem::StepProblem p{&m, v, 1, dt};
  const auto u = bem::implicit_step(p, {});
  const Eigen::VectorXd expected =
      (Eigen::MatrixXd::Identity(2, 2) - dt * a).lu().solve(v);
  CHECK((u - expected).norm() < 1e-10);
}

TEST_CASE("implicit step agrees with the bisection oracle on 1000 random cubic problems") {
  const auto m = model::builtin_model("example41");
  const bem::SolverOptions opts;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = static_cast<std::uint64_t>(trial);
    const double v = -5.0 + 10.0 * rng::uniform(31, rng::Stream::scan, t, 0, 0);
    const double dt = 0.001 + 0.149 * rng::uniform(31, rng::Stream::scan, t, 1, 0);
    const int regime = rng::uniform(31, rng::Stream::scan, t, 2, 0) < 0.5 ? 1 : 2;

    bem::StepProblem p{&m, scalar(v), regime, dt};
    bem::SolveStats stats;
    const auto u = bem::implicit_step(p, opts, &stats);
    CHECK(std::abs(u(0) - cubic_oracle(v, regime, dt)) < 1e-10);
    // Residual postcondition on every successful return.
    CHECK(residual_of(m, u(0), regime, dt, v) <= opts.tol);
  }
}

TEST_CASE("warm start converges in a few iterations on the gentle quadratic") {
  // f(u) = -u^2 makes G(u) = u + dt u^2.
  model::PolynomialModel spec;
  spec.id = "quadratic";
  spec.state_dim = 1;
  spec.noise_dim = 1;
  spec.regime_count = 1;
  spec.drift = {{{{-1.0, {2}}}}};
  spec.diffusion = {{{{}}}};
  const auto m = model::make_polynomial_model(spec);

  bem::StepProblem p{&m, scalar(1.0), 1, 0.01};
  bem::SolveStats stats;
  const auto u = bem::implicit_step(p, {}, &stats);
  CHECK(stats.newton_iterations <= 5);
  const auto g = [&](double x) { return x + 0.01 * x * x; };
  CHECK(u(0) == doctest::Approx(oracles::bisection_root(g, 1.0, -2.0, 2.0, 1e-13)).epsilon(1e-10));
}

TEST_CASE("newton reports a singular Jacobian and the fallback still solves") {
  // G(u) = u^3 has slope zero at the origin.
  bem::MonotoneMap map;
  map.dim = 1;
  map.eval = [](const Eigen::VectorXd& u, Eigen::VectorXd& out) {
    out.resize(1);
    out(0) = u(0) * u(0) * u(0);
  };
  map.jacobian = [](const Eigen::VectorXd& u, Eigen::MatrixXd& out) {
    out.resize(1, 1);
    out(0, 0) = 3.0 * u(0) * u(0);
  };

  try {
    bem::newton_solve(map, scalar(0.008), scalar(0.0), {});
    FAIL("singular Jacobian not reported");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::singular_jacobian);
  }

  const auto u = bem::fallback_solve(map, scalar(0.008), {});
  CHECK(u(0) == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("fallback bisection handles the steep cubic away from the origin") {
  const auto m = model::builtin_model("example41");
  const auto map = bem::step_map(m, 1, 0.01);
  const auto u = bem::fallback_solve(map, scalar(5.0), {});
  CHECK(u(0) == doctest::Approx(cubic_oracle(5.0, 1, 0.01)).epsilon(1e-9));

  // Identity map: the probe at v already satisfies the tolerance.
  bem::MonotoneMap identity;
  identity.dim = 1;
  identity.eval = [](const Eigen::VectorXd& u, Eigen::VectorXd& out) { out = u; };
  CHECK(bem::fallback_solve(identity, scalar(3.25), {})(0) == 3.25);
}

TEST_CASE("damped fixed point converges for stiff linear drift in two dimensions") {
  Eigen::MatrixXd a(2, 2);
  a << -50.0, 0.0, 0.0, -0.5;
  const auto m = linear_model(a);
  const double dt = 0.01;  // ||dt A|| = 0.5 < 1
  const auto map = bem::step_map(m, 1, dt);
  Eigen::VectorXd v(2);
  v << 2.0, -1.0;
  const auto u = bem::fallback_solve(map, v, {});
  const Eigen::VectorXd expected = (Eigen::MatrixXd::Identity(2, 2) - dt * a).lu().solve(v);
  CHECK((u - expected).norm() < 1e-9);
}

TEST_CASE("the root is unique: perturbed starts land on the same solution") {
  const auto m = model::builtin_model("example41");
  const bem::SolverOptions opts;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto t = static_cast<std::uint64_t>(trial);
    const double v = -5.0 + 10.0 * rng::uniform(77, rng::Stream::scan, t, 0, 0);
    const double dt = 0.001 + 0.149 * rng::uniform(77, rng::Stream::scan, t, 1, 0);
    const int regime = rng::uniform(77, rng::Stream::scan, t, 2, 0) < 0.5 ? 1 : 2;
    const auto map = bem::step_map(m, regime, dt);

    const auto solve_from = [&](double start) {
      try {
        return bem::newton_solve(map, scalar(v), scalar(start), opts);
      } catch (const Error&) {
        return bem::fallback_solve(map, scalar(v), opts);
      }
    };
    const auto u1 = solve_from(v);
    const auto u2 = solve_from(v + 0.5);
    CHECK(std::abs(u1(0) - u2(0)) <= 10.0 * opts.tol);
  }
}

TEST_CASE("the implicit map is strongly monotone under the step bound") {
  const auto m = model::builtin_model("example41");
  const double n_i[2] = {2.0, -4.0};
  for (int trial = 0; trial < 2000; ++trial) {
    const auto t = static_cast<std::uint64_t>(trial);
    const double u1 = -8.0 + 16.0 * rng::uniform(55, rng::Stream::scan, t, 0, 0);
    const double u2 = -8.0 + 16.0 * rng::uniform(55, rng::Stream::scan, t, 1, 0);
    const double dt = 1e-4 + (1.0 / 6.0 - 2e-4) * rng::uniform(55, rng::Stream::scan, t, 2, 0);
    if (u1 == u2) continue;
    for (int regime : {1, 2}) {
      const auto map = bem::step_map(m, regime, dt);
      Eigen::VectorXd g1(1), g2(1);
      map.eval(scalar(u1), g1);
      map.eval(scalar(u2), g2);
      const double lhs = (u1 - u2) * (g1(0) - g2(0));
      const double rhs = (1.0 - n_i[regime - 1] * dt / 2.0) * (u1 - u2) * (u1 - u2);
      CHECK(lhs >= rhs - 1e-9);
    }
  }
}

TEST_CASE("failures carry the best iterate and a residual") {
  const auto m = model::builtin_model("example41");
  bem::SolverOptions strangled;
  strangled.max_newton_iters = 1;
  strangled.max_bisection_iters = 1;
  bem::StepProblem p{&m, scalar(5.0), 1, 0.1};
  try {
    bem::implicit_step(p, strangled);
    FAIL("expected failure under a starved iteration budget");
  } catch (const SolveError& e) {
    CHECK(e.code() == Errc::no_convergence);
    CHECK(e.best_iterate().size() == 1);
    CHECK(std::isfinite(e.residual()));
    CHECK(e.residual() > 0.0);
  }
}

TEST_CASE("non-finite model evaluations are reported as such") {
  const auto nan_model = model::HybridModel(
      "nan", 1, 1, 1,
      [](const Eigen::VectorXd&, int, Eigen::VectorXd& out) {
        out(0) = std::numeric_limits<double>::quiet_NaN();
      },
      [](const Eigen::VectorXd&, int, Eigen::MatrixXd& out) { out(0, 0) = 0.0; });
  bem::StepProblem p{&nan_model, scalar(0.0), 1, 0.01};
  try {
    bem::implicit_step(p, {});
    FAIL("NaN drift accepted");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite_evaluation);
  }
}

TEST_CASE("the reusable stepper replays implicit_step bit for bit") {
  const auto m = model::builtin_model("example41");
  bem::Stepper stepper(m, 0.01, {});
  Eigen::VectorXd out(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = static_cast<std::uint64_t>(trial);
    const double v = -5.0 + 10.0 * rng::uniform(91, rng::Stream::scan, t, 0, 0);
    const int regime = rng::uniform(91, rng::Stream::scan, t, 1, 0) < 0.5 ? 1 : 2;
    stepper.solve(scalar(v), regime, out);
    bem::StepProblem p{&m, scalar(v), regime, 0.01};
    const auto reference = bem::implicit_step(p, {});
    CHECK(out(0) == reference(0));
  }
}

TEST_CASE("solver options are validated") {
  bem::SolverOptions opts;
  opts.tol = 0.0;
  CHECK_THROWS_AS(opts.validate(), std::invalid_argument);
  opts = {};
  opts.max_newton_iters = 0;
  CHECK_THROWS_AS(opts.validate(), std::invalid_argument);
}
