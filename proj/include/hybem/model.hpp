#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hybem::model {

/// In-place evaluation keeps the stepping loop free of per-call allocation.
using DriftFn = std::function<void(const Eigen::VectorXd& x, int regime, Eigen::VectorXd& out)>;
using DiffusionFn = std::function<void(const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out)>;
using DriftJacobianFn =
    std::function<void(const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out)>;

/// Growth/monotonicity/dissipativity constants attached to a model. When
/// derived, b_i and m follow from the coefficient values at the origin:
///   b_i = 4 a_i + 2 (|f(0,i)|^2 v |g(0,i)|^2)
///   m   = max_i { |f(0,i)|^2 + (l1 l2 / 2) |g(0,i)|^2 }
struct ModelConstants {
  double q = 2.0;          // growth exponent, >= 2
  std::vector<double> a;   // per-regime, > 0
  std::vector<double> b;   // per-regime, > 0
  double l1 = 5.0;         // > 4
  double l2 = 3.0;         // l1 - 2
  std::vector<double> n;   // per-regime one-sided slope bounds
  double n_m = 0.0;        // max_i |n_i|
  double m = 0.0;

  void validate(int regime_count) const;
};

class HybridModel {
 public:
  HybridModel(std::string id, int state_dim, int noise_dim, int regime_count, DriftFn drift,
              DiffusionFn diffusion, DriftJacobianFn drift_jacobian = nullptr);

  [[nodiscard]] const std::string& id() const noexcept { return id_; }
  [[nodiscard]] int state_dim() const noexcept { return state_dim_; }
  [[nodiscard]] int noise_dim() const noexcept { return noise_dim_; }
  [[nodiscard]] int regime_count() const noexcept { return regime_count_; }

  void drift_into(const Eigen::VectorXd& x, int regime, Eigen::VectorXd& out) const;
  void diffusion_into(const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out) const;

  [[nodiscard]] bool has_analytic_jacobian() const noexcept {
    return static_cast<bool>(drift_jacobian_);
  }
  void drift_jacobian_into(const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out) const;

  [[nodiscard]] Eigen::VectorXd drift(const Eigen::VectorXd& x, int regime) const;
  [[nodiscard]] Eigen::MatrixXd diffusion(const Eigen::VectorXd& x, int regime) const;

  [[nodiscard]] const std::optional<ModelConstants>& declared_constants() const noexcept {
    return constants_;
  }
  void declare_constants(ModelConstants constants);

 private:
  void check_regime(int regime) const;

  std::string id_;
  int state_dim_;
  int noise_dim_;
  int regime_count_;
  DriftFn drift_;
  DiffusionFn diffusion_;
  DriftJacobianFn drift_jacobian_;
  std::optional<ModelConstants> constants_;
};

/// Fills in b, l2, n_m, m from their defining formulas.
ModelConstants derive_constants(const HybridModel& model, double q, std::vector<double> a,
                                double l1, std::vector<double> n);

/// Upper end of the admissible step-size interval (open): 1/(n_M + 2).
double max_step_size(const ModelConstants& constants);

/// Axis-aligned sampling domain for the randomized inequality scans.
struct SamplingBox {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  void validate() const;  // throws DegenerateBox
};

struct PairViolation {
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // unused for one-point checks
  int regime = 0;
  double lhs = 0.0;
  double rhs = 0.0;
};

/// Outcome of one randomized inequality scan. A clean scan means "no
/// counterexample found among the sampled points", not a proof.
struct ScanReport {
  std::int64_t checked = 0;
  std::int64_t violations = 0;
  std::vector<PairViolation> examples;  // first few offenders
};

/// Regime-weighted slope balance. Both decay rates are the negated weighted
/// sums; the report passes iff both sums are negative.
struct AssumptionReport {
  double s1 = 0.0;
  double s2 = 0.0;
  double lambda1 = 0.0;  // = -s1
  double lambda2 = 0.0;  // = -s2
  bool passes = false;
  double max_step = 0.0;

  ScanReport lipschitz;       // pairwise growth bound with exponent q
  ScanReport growth;          // one-point bound with b_i
  ScanReport monotonicity;    // pairwise one-sided bound with n_i
  ScanReport dissipativity;   // one-point bound with m and 1 + n_i
};

AssumptionReport check_assumption3(const std::vector<double>& n, const Eigen::VectorXd& mu);

/// Randomized falsification of the declared constants on a box. Tolerance is
/// 1e-9 scaled by (1 + |x-y|^2) for pair checks and (1 + |x|^2) for
/// one-point checks.
ScanReport scan_lipschitz(const HybridModel& model, const ModelConstants& constants,
                          const SamplingBox& box, std::int64_t pairs, std::uint64_t seed);
ScanReport scan_growth(const HybridModel& model, const ModelConstants& constants,
                       const SamplingBox& box, std::int64_t samples, std::uint64_t seed);
ScanReport scan_monotonicity(const HybridModel& model, const ModelConstants& constants,
                             const SamplingBox& box, std::int64_t pairs, std::uint64_t seed);
ScanReport scan_dissipativity(const HybridModel& model, const ModelConstants& constants,
                              const SamplingBox& box, std::int64_t samples, std::uint64_t seed);

/// Empirical sup of the one-sided slope quotient over sampled pairs, per
/// regime. A lower bound on any valid n_i.
std::vector<double> estimate_monotonicity(const HybridModel& model, double l1,
                                          const SamplingBox& box, std::int64_t samples,
                                          std::uint64_t seed);

struct LipschitzEstimate {
  double q_hat = 2.0;
  std::vector<double> a_hat;  // per regime, sup of the sampled quotient at q_hat
};

/// Picks the smallest integer exponent whose sampled quotient sup is stable
/// under doubling the box (growth factor <= 1.5), then reports the per-regime
/// sups at that exponent. The reported pair satisfies the growth inequality
/// on every sampled pair by construction.
LipschitzEstimate estimate_polynomial_lipschitz(const HybridModel& model, const SamplingBox& box,
                                                std::int64_t samples, std::uint64_t seed);

/// One scalar polynomial term: coefficient * prod_d x_d^exponents[d].
struct PolynomialTerm {
  double coefficient = 0.0;
  std::vector<int> exponents;
};
using Polynomial = std::vector<PolynomialTerm>;

/// Declarative polynomial model: drift[regime][component] and
/// diffusion[regime][row][col] are polynomials in the state.
struct PolynomialModel {
  std::string id;
  int state_dim = 1;
  int noise_dim = 1;
  int regime_count = 1;
  std::vector<std::vector<Polynomial>> drift;
  std::vector<std::vector<std::vector<Polynomial>>> diffusion;
};

/// Builds a HybridModel with analytic drift Jacobian from coefficient tables.
HybridModel make_polynomial_model(const PolynomialModel& spec);

/// Built-in registry. Currently: "example41", the scalar two-regime cubic
/// model with x^2 diffusion.
HybridModel builtin_model(const std::string& name);

/// Constants under which example41 satisfies the growth, monotonicity and
/// dissipativity bounds: q=6, a=(900,1089), l1=5, n=(2,-4).
ModelConstants example41_constants(const HybridModel& model);

}  // namespace hybem::model
