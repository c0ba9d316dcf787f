#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace hybem {

/// Error categories used across the library. Tests and the CLI dispatch on
/// these instead of parsing messages.
enum class Errc {
  negative_off_diagonal,
  row_sum_nonzero,
  reducible,
  singular_system,
  degenerate_box,
  invalid_p,
  size_cap_exceeded,
  empty_sample,
  non_positive_values,
  too_few_points,
  no_convergence,
  singular_jacobian,
  non_finite_evaluation,
  off_grid_time,
  unstable_step,
  ensemble_failure,
  config_parse,
  io_error,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Nonlinear-solve failure. Carries the best iterate seen and its residual so
/// callers can report how close the solver got.
class SolveError : public Error {
 public:
  SolveError(Errc code, const std::string& message, Eigen::VectorXd best_iterate,
             double residual)
      : Error(code, message), best_iterate_(std::move(best_iterate)), residual_(residual) {}

  [[nodiscard]] const Eigen::VectorXd& best_iterate() const noexcept { return best_iterate_; }
  [[nodiscard]] double residual() const noexcept { return residual_; }

 private:
  Eigen::VectorXd best_iterate_;
  double residual_;
};

}  // namespace hybem
