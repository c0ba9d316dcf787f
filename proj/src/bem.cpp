#include "hybem/bem.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "hybem/errors.hpp"

namespace hybem::bem {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

enum class CoreStatus { ok, singular, no_convergence, non_finite };

struct CoreWorkspace {
  Eigen::VectorXd g;
  Eigen::VectorXd g2;
  Eigen::VectorXd r;
  Eigen::VectorXd delta;
  Eigen::VectorXd trial;
  Eigen::VectorXd best;
  Eigen::MatrixXd jac;
  Eigen::FullPivLU<Eigen::MatrixXd> lu;
  double best_residual = kInf;
};

void track_best(CoreWorkspace& ws, const Eigen::VectorXd& u, double residual) {
  if (residual < ws.best_residual) {
    ws.best = u;
    ws.best_residual = residual;
  }
}

// Newton with warm start; u must not alias v. Consumes at most
// max_newton_iters updates.
CoreStatus newton_core(const MonotoneMap& map, const Eigen::VectorXd& v,
                       const Eigen::VectorXd& u0, const SolverOptions& opts, CoreWorkspace& ws,
                       Eigen::VectorXd& u, SolveStats& stats) {
  const int n = map.dim;
  u = u0;
  double initial_residual = -1.0;
  for (int iter = 0;; ++iter) {
    map.eval(u, ws.g);
    if (!ws.g.allFinite())
      return iter == 0 ? CoreStatus::non_finite : CoreStatus::no_convergence;
    ws.r = ws.g - v;
    const double residual = ws.r.norm();
    track_best(ws, u, residual);
    stats.newton_iterations = iter;
    stats.residual = residual;
    if (residual <= opts.tol) return CoreStatus::ok;
    if (iter == opts.max_newton_iters) return CoreStatus::no_convergence;
    if (initial_residual < 0.0)
      initial_residual = residual;
    else if (residual > 1e6 * (initial_residual + 1.0))
      return CoreStatus::no_convergence;  // diverging, hand over to the fallback

    if (map.jacobian && opts.analytic_jacobian) {
      map.jacobian(u, ws.jac);
    } else {
      const double h = opts.fd_scale * (1.0 + u.norm());
      ws.jac.resize(n, n);
      for (int j = 0; j < n; ++j) {
        ws.trial = u;
        ws.trial(j) += h;
        map.eval(ws.trial, ws.g2);
        ws.jac.col(j) = (ws.g2 - ws.g) / h;
      }
    }
    if (!ws.jac.allFinite()) return CoreStatus::no_convergence;

    if (n == 1) {
      const double slope = ws.jac(0, 0);
      if (std::abs(slope) < 1e-300) return CoreStatus::singular;
      u(0) -= ws.r(0) / slope;
    } else {
      ws.lu.compute(ws.jac);
      if (!ws.lu.isInvertible()) return CoreStatus::singular;
      ws.delta = ws.lu.solve(ws.r);
      u -= ws.delta;
    }
    if (!u.allFinite()) return CoreStatus::no_convergence;
  }
}

// 1-D bisection on the increasing map G; bracket doubles outward from v until
// it straddles the target. Infinite endpoint values still order correctly;
// NaN aborts.
CoreStatus bisection_core(const MonotoneMap& map, const Eigen::VectorXd& v,
                          const SolverOptions& opts, CoreWorkspace& ws, Eigen::VectorXd& u,
                          SolveStats& stats) {
  const double target = v(0);
  ws.trial.resize(1);
  int evals_left = opts.max_bisection_iters;
  bool saw_nan = false;
  const auto eval = [&](double point) {
    ws.trial(0) = point;
    map.eval(ws.trial, ws.g);
    const double value = ws.g(0);
    if (std::isnan(value)) {
      saw_nan = true;
      return value;
    }
    const double residual = std::abs(value - target);
    if (std::isfinite(residual)) {
      ws.trial(0) = point;
      track_best(ws, ws.trial, residual);
    }
    return value;
  };
  const auto accept = [&](double point, double residual) {
    u.resize(1);
    u(0) = point;
    stats.residual = residual;
    return CoreStatus::ok;
  };

  // Free first probe at the explicit part; exact for identity maps.
  const double gv = eval(target);
  --evals_left;
  if (saw_nan) return CoreStatus::non_finite;
  if (std::abs(gv - target) <= opts.tol) return accept(target, std::abs(gv - target));

  double width_lo = 1.0 + 0.5 * std::abs(target);
  double lo = target - width_lo;
  double glo = eval(lo);
  --evals_left;
  while (!saw_nan && !(glo <= target) && evals_left > 0) {
    width_lo *= 2.0;
    lo = target - width_lo;
    glo = eval(lo);
    --evals_left;
  }
  if (saw_nan) return CoreStatus::non_finite;
  if (!(glo <= target)) return CoreStatus::no_convergence;

  double width_hi = 1.0 + 0.5 * std::abs(target);
  double hi = target + width_hi;
  double ghi = eval(hi);
  --evals_left;
  while (!saw_nan && !(ghi >= target) && evals_left > 0) {
    width_hi *= 2.0;
    hi = target + width_hi;
    ghi = eval(hi);
    --evals_left;
  }
  if (saw_nan) return CoreStatus::non_finite;
  if (!(ghi >= target)) return CoreStatus::no_convergence;

  while (evals_left-- > 0) {
    const double mid = 0.5 * (lo + hi);
    const double gm = eval(mid);
    if (saw_nan) return CoreStatus::non_finite;
    const double residual = std::abs(gm - target);
    if (residual <= opts.tol) return accept(mid, residual);
    if (gm < target)
      lo = mid;
    else
      hi = mid;
    if (hi - lo <= 1e-17 * (1.0 + std::abs(mid))) break;  // interval exhausted
  }
  return CoreStatus::no_convergence;
}

// Damped fixed point u <- u - lambda (G(u) - v) with lambda = 1/(1 + L dt)
// where L dt is read off a finite-difference slope of G at v.
CoreStatus damped_core(const MonotoneMap& map, const Eigen::VectorXd& v,
                       const SolverOptions& opts, CoreWorkspace& ws, Eigen::VectorXd& u,
                       SolveStats& stats) {
  const int n = map.dim;
  u = v;
  map.eval(u, ws.g);
  if (!ws.g.allFinite()) return CoreStatus::non_finite;
  ws.r = ws.g - v;
  double residual = ws.r.norm();
  track_best(ws, u, residual);
  if (residual <= opts.tol) {
    stats.residual = residual;
    return CoreStatus::ok;
  }

  const double h = opts.fd_scale * (1.0 + v.norm());
  ws.jac.resize(n, n);
  for (int j = 0; j < n; ++j) {
    ws.trial = v;
    ws.trial(j) += h;
    map.eval(ws.trial, ws.g2);
    ws.jac.col(j) = (ws.g2 - ws.g) / h;
  }
  double slope = ws.jac.allFinite() ? ws.jac.cwiseAbs().rowwise().sum().maxCoeff() : 2.0;
  const double excess = std::max(0.0, slope - 1.0);
  const double lambda = 1.0 / (1.0 + excess);

  for (int iter = 0; iter < opts.max_bisection_iters; ++iter) {
    u -= lambda * ws.r;
    map.eval(u, ws.g);
    if (!ws.g.allFinite()) return CoreStatus::no_convergence;
    ws.r = ws.g - v;
    residual = ws.r.norm();
    track_best(ws, u, residual);
    if (residual <= opts.tol) {
      stats.residual = residual;
      return CoreStatus::ok;
    }
  }
  return CoreStatus::no_convergence;
}

CoreStatus fallback_core(const MonotoneMap& map, const Eigen::VectorXd& v,
                         const SolverOptions& opts, CoreWorkspace& ws, Eigen::VectorXd& u,
                         SolveStats& stats) {
  stats.used_fallback = true;
  return map.dim == 1 ? bisection_core(map, v, opts, ws, u, stats)
                      : damped_core(map, v, opts, ws, u, stats);
}

[[noreturn]] void throw_failure(CoreStatus status, const CoreWorkspace& ws) {
  if (status == CoreStatus::non_finite)
    throw Error(Errc::non_finite_evaluation, "map evaluation returned NaN");
  throw SolveError(Errc::no_convergence,
                   "residual " + std::to_string(ws.best_residual) + " above tolerance",
                   ws.best, ws.best_residual);
}

}  // namespace

void SolverOptions::validate() const {
  if (!(tol > 0.0)) throw std::invalid_argument("solver tolerance must be positive");
  if (max_newton_iters < 1 || max_bisection_iters < 1)
    throw std::invalid_argument("iteration caps must be at least 1");
  if (!(fd_scale > 0.0)) throw std::invalid_argument("finite-difference scale must be positive");
}

MonotoneMap step_map(const model::HybridModel& model, int regime, double dt) {
  const model::HybridModel* m = &model;
  auto tmp = std::make_shared<Eigen::VectorXd>(model.state_dim());
  MonotoneMap map;
  map.dim = model.state_dim();
  map.eval = [m, regime, dt, tmp](const Eigen::VectorXd& u, Eigen::VectorXd& out) {
    m->drift_into(u, regime, *tmp);
    out = u - dt * (*tmp);
  };
  if (model.has_analytic_jacobian()) {
    auto jtmp = std::make_shared<Eigen::MatrixXd>(map.dim, map.dim);
    map.jacobian = [m, regime, dt, jtmp](const Eigen::VectorXd& u, Eigen::MatrixXd& out) {
      m->drift_jacobian_into(u, regime, *jtmp);
      out = -dt * (*jtmp);
      out.diagonal().array() += 1.0;
    };
  }
  return map;
}

Eigen::VectorXd newton_solve(const MonotoneMap& map, const Eigen::VectorXd& v,
                             const Eigen::VectorXd& u0, const SolverOptions& opts) {
  opts.validate();
  CoreWorkspace ws;
  Eigen::VectorXd u;
  SolveStats stats;
  const auto status = newton_core(map, v, u0, opts, ws, u, stats);
  if (status == CoreStatus::ok) return u;
  if (status == CoreStatus::singular)
    throw Error(Errc::singular_jacobian, "Jacobian not invertible at iterate");
  throw_failure(status, ws);
}

Eigen::VectorXd fallback_solve(const MonotoneMap& map, const Eigen::VectorXd& v,
                               const SolverOptions& opts) {
  opts.validate();
  CoreWorkspace ws;
  Eigen::VectorXd u;
  SolveStats stats;
  const auto status = fallback_core(map, v, opts, ws, u, stats);
  if (status == CoreStatus::ok) return u;
  throw_failure(status, ws);
}

Eigen::VectorXd implicit_step(const StepProblem& problem, const SolverOptions& opts,
                              SolveStats* stats_out) {
  opts.validate();
  if (problem.model == nullptr) throw std::invalid_argument("step problem has no model");
  if (!(problem.dt >= 0.0) || !std::isfinite(problem.dt))
    throw std::invalid_argument("step size must be finite and nonnegative");
  if (problem.rhs.size() != problem.model->state_dim())
    throw std::invalid_argument("rhs dimension mismatch");

  const MonotoneMap map = step_map(*problem.model, problem.regime, problem.dt);
  CoreWorkspace ws;
  Eigen::VectorXd u;
  SolveStats stats;
  auto status = newton_core(map, problem.rhs, problem.rhs, opts, ws, u, stats);
  if (status != CoreStatus::ok) status = fallback_core(map, problem.rhs, opts, ws, u, stats);
  if (status != CoreStatus::ok) throw_failure(status, ws);
  if (stats_out != nullptr) *stats_out = stats;
  return u;
}

struct Stepper::Workspace {
  CoreWorkspace core;
};

Stepper::Stepper(const model::HybridModel& model, double dt, SolverOptions opts)
    : model_(&model), dt_(dt), opts_(opts), ws_(std::make_shared<Workspace>()) {
  opts_.validate();
  if (!(dt >= 0.0) || !std::isfinite(dt))
    throw std::invalid_argument("step size must be finite and nonnegative");
  f_tmp_.resize(model.state_dim());
  map_.dim = model.state_dim();
  map_.eval = [this](const Eigen::VectorXd& u, Eigen::VectorXd& out) {
    model_->drift_into(u, regime_, f_tmp_);
    out = u - dt_ * f_tmp_;
  };
  if (model.has_analytic_jacobian()) {
    j_tmp_.resize(map_.dim, map_.dim);
    map_.jacobian = [this](const Eigen::VectorXd& u, Eigen::MatrixXd& out) {
      model_->drift_jacobian_into(u, regime_, j_tmp_);
      out = -dt_ * j_tmp_;
      out.diagonal().array() += 1.0;
    };
  }
}

void Stepper::solve(const Eigen::VectorXd& v, int regime, Eigen::VectorXd& out) {
  regime_ = regime;
  stats_ = {};
  ws_->core.best_residual = kInf;
  auto status = newton_core(map_, v, v, opts_, ws_->core, out, stats_);
  if (status != CoreStatus::ok) status = fallback_core(map_, v, opts_, ws_->core, out, stats_);
  if (status != CoreStatus::ok) throw_failure(status, ws_->core);
}

}  // namespace hybem::bem
