#pragma once

#include <Eigen/Core>
#include <Eigen/LU>

#include <functional>
#include <memory>

#include "hybem/model.hpp"

namespace hybem::bem {

struct SolverOptions {
  double tol = 1e-12;          // absolute residual tolerance on |G(u) - v|
  int max_newton_iters = 50;
  int max_bisection_iters = 200;  // also caps the damped fallback and bracket growth
  bool analytic_jacobian = true;  // use the model's Jacobian when present
  double fd_scale = 1e-7;         // finite-difference step h = fd_scale * (1 + |u|)

  void validate() const;
};

/// One implicit sub-step: solve u - dt * f(u, regime) = rhs.
struct StepProblem {
  const model::HybridModel* model = nullptr;
  Eigen::VectorXd rhs;
  int regime = 1;
  double dt = 0.0;
};

/// Strongly monotone map G with optional Jacobian, the shape the implicit
/// step produces. Kept abstract so the solvers are testable on crafted maps.
struct MonotoneMap {
  int dim = 0;
  std::function<void(const Eigen::VectorXd& u, Eigen::VectorXd& out)> eval;
  std::function<void(const Eigen::VectorXd& u, Eigen::MatrixXd& out)> jacobian;  // optional
};

struct SolveStats {
  int newton_iterations = 0;
  bool used_fallback = false;
  double residual = 0.0;
};

/// Self-contained map u -> u - dt * f(u, regime) for desk use and tests.
MonotoneMap step_map(const model::HybridModel& model, int regime, double dt);

/// Newton iteration from u0 with the map's Jacobian or finite differences.
/// Throws SingularJacobian or NoConvergence; callers wanting the guaranteed
/// path use implicit_step, which falls back automatically.
Eigen::VectorXd newton_solve(const MonotoneMap& map, const Eigen::VectorXd& v,
                             const Eigen::VectorXd& u0, const SolverOptions& opts);

/// Derivative-free solve: bisection over an adaptively expanded bracket in
/// one dimension, damped fixed-point iteration otherwise.
Eigen::VectorXd fallback_solve(const MonotoneMap& map, const Eigen::VectorXd& v,
                               const SolverOptions& opts);

/// Warm-started Newton with automatic fallback; postcondition
/// |G(u) - v| <= tol on every successful return.
Eigen::VectorXd implicit_step(const StepProblem& problem, const SolverOptions& opts,
                              SolveStats* stats = nullptr);

/// Reusable solver bound to (model, dt): no per-call allocation, one instance
/// per worker thread. Same algorithm as implicit_step.
class Stepper {
 public:
  Stepper(const model::HybridModel& model, double dt, SolverOptions opts);
  Stepper(const Stepper&) = delete;
  Stepper& operator=(const Stepper&) = delete;

  /// Solves G_regime(u) = v into out, which must not alias v. Throws
  /// SolveError / Error on failure.
  void solve(const Eigen::VectorXd& v, int regime, Eigen::VectorXd& out);

  [[nodiscard]] const SolveStats& last_stats() const noexcept { return stats_; }
  [[nodiscard]] double dt() const noexcept { return dt_; }

 private:
  const model::HybridModel* model_;
  double dt_;
  SolverOptions opts_;
  int regime_ = 1;
  MonotoneMap map_;
  SolveStats stats_;
  Eigen::VectorXd f_tmp_;
  Eigen::MatrixXd j_tmp_;
  struct Workspace;
  std::shared_ptr<Workspace> ws_;
};

}  // namespace hybem::bem
