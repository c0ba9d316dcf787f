#include "hybem/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include "hybem/errors.hpp"
#include "hybem/rng.hpp"

namespace hybem::model {
namespace {

constexpr int kMaxViolationExamples = 8;
constexpr double kScanTolerance = 1e-9;

double pow_int(double base, int exponent) {
  double acc = 1.0;
  for (int i = 0; i < exponent; ++i) acc *= base;
  return acc;
}

void require_finite(double value, const char* what) {
  if (!std::isfinite(value))
    throw Error(Errc::non_finite_evaluation, std::string(what) + " is not finite");
}

// Roles keep the draws for x, y and the perturbation direction independent.
enum : std::uint32_t { kRoleX = 0, kRoleY = 1, kRolePerturb = 2 };

void sample_point(const SamplingBox& box, std::uint64_t seed, std::uint64_t index,
                  std::uint32_t role, Eigen::VectorXd& out) {
  const auto dim = static_cast<int>(box.lo.size());
  out.resize(dim);
  for (int d = 0; d < dim; ++d) {
    const double u = rng::uniform(seed, rng::Stream::scan, index, role, static_cast<std::uint32_t>(d));
    out(d) = box.lo(d) + u * (box.hi(d) - box.lo(d));
  }
}

// Even indices: two independent points. Odd indices: a short random
// displacement, so quotient sups also see the x -> y limit.
void sample_pair(const SamplingBox& box, std::uint64_t seed, std::uint64_t index,
                 Eigen::VectorXd& x, Eigen::VectorXd& y) {
  sample_point(box, seed, index, kRoleX, x);
  if (index % 2 == 0) {
    sample_point(box, seed, index, kRoleY, y);
    return;
  }
  const auto dim = static_cast<int>(box.lo.size());
  y.resize(dim);
  for (int d = 0; d < dim; ++d) {
    const double u =
        rng::uniform(seed, rng::Stream::scan, index, kRolePerturb, static_cast<std::uint32_t>(d));
    y(d) = x(d) + 1e-4 * (box.hi(d) - box.lo(d)) * (2.0 * u - 1.0);
  }
}

void record_violation(ScanReport& report, const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                      int regime, double lhs, double rhs) {
  ++report.violations;
  if (static_cast<int>(report.examples.size()) < kMaxViolationExamples)
    report.examples.push_back({x, y, regime, lhs, rhs});
}

double sq_norm_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).squaredNorm();
}

Polynomial differentiate(const Polynomial& poly, int dim) {
  Polynomial result;
  for (const auto& term : poly) {
    if (term.exponents[static_cast<std::size_t>(dim)] == 0) continue;
    PolynomialTerm d = term;
    d.coefficient *= d.exponents[static_cast<std::size_t>(dim)];
    d.exponents[static_cast<std::size_t>(dim)] -= 1;
    result.push_back(std::move(d));
  }
  return result;
}

double eval_polynomial(const Polynomial& poly, const Eigen::VectorXd& x) {
  double acc = 0.0;
  for (const auto& term : poly) {
    double value = term.coefficient;
    for (int d = 0; d < x.size(); ++d) value *= pow_int(x(d), term.exponents[static_cast<std::size_t>(d)]);
    acc += value;
  }
  return acc;
}

void validate_polynomial(const Polynomial& poly, int state_dim, const std::string& where) {
  for (const auto& term : poly) {
    if (static_cast<int>(term.exponents.size()) != state_dim)
      throw std::invalid_argument(where + ": exponent list length != state dimension");
    for (int e : term.exponents)
      if (e < 0) throw std::invalid_argument(where + ": negative exponent");
  }
}

}  // namespace

void ModelConstants::validate(int regime_count) const {
  const auto count = static_cast<std::size_t>(regime_count);
  if (a.size() != count || b.size() != count || n.size() != count)
    throw std::invalid_argument("constants arrays must have one entry per regime");
  if (!(q >= 2.0)) throw std::invalid_argument("growth exponent q must be >= 2");
  if (!(l1 > 4.0)) throw std::invalid_argument("l1 must exceed 4");
  if (std::abs(l2 - (l1 - 2.0)) > 1e-12) throw std::invalid_argument("l2 must equal l1 - 2");
  for (double v : a)
    if (!(v > 0.0)) throw std::invalid_argument("a entries must be positive");
  for (double v : b)
    if (!(v > 0.0)) throw std::invalid_argument("b entries must be positive");
  double max_abs = 0.0;
  for (double v : n) max_abs = std::max(max_abs, std::abs(v));
  if (std::abs(n_m - max_abs) > 1e-12) throw std::invalid_argument("n_m must equal max |n_i|");
}

HybridModel::HybridModel(std::string id, int state_dim, int noise_dim, int regime_count,
                         DriftFn drift, DiffusionFn diffusion, DriftJacobianFn drift_jacobian)
    : id_(std::move(id)),
      state_dim_(state_dim),
      noise_dim_(noise_dim),
      regime_count_(regime_count),
      drift_(std::move(drift)),
      diffusion_(std::move(diffusion)),
      drift_jacobian_(std::move(drift_jacobian)) {
  if (state_dim_ < 1 || noise_dim_ < 1 || regime_count_ < 1)
    throw std::invalid_argument("model dimensions must be positive");
  if (!drift_ || !diffusion_) throw std::invalid_argument("drift and diffusion are required");
}

void HybridModel::check_regime(int regime) const {
  if (regime < 1 || regime > regime_count_)
    throw std::invalid_argument("regime " + std::to_string(regime) + " outside 1.." +
                                std::to_string(regime_count_));
}

void HybridModel::drift_into(const Eigen::VectorXd& x, int regime, Eigen::VectorXd& out) const {
  check_regime(regime);
  out.resize(state_dim_);
  drift_(x, regime, out);
}

void HybridModel::diffusion_into(const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out) const {
  check_regime(regime);
  out.resize(state_dim_, noise_dim_);
  diffusion_(x, regime, out);
}

void HybridModel::drift_jacobian_into(const Eigen::VectorXd& x, int regime,
                                      Eigen::MatrixXd& out) const {
  if (!drift_jacobian_) throw std::logic_error("model has no analytic drift Jacobian");
  check_regime(regime);
  out.resize(state_dim_, state_dim_);
  drift_jacobian_(x, regime, out);
}

Eigen::VectorXd HybridModel::drift(const Eigen::VectorXd& x, int regime) const {
  Eigen::VectorXd out(state_dim_);
  drift_into(x, regime, out);
  return out;
}

Eigen::MatrixXd HybridModel::diffusion(const Eigen::VectorXd& x, int regime) const {
  Eigen::MatrixXd out(state_dim_, noise_dim_);
  diffusion_into(x, regime, out);
  return out;
}

void HybridModel::declare_constants(ModelConstants constants) {
  constants.validate(regime_count_);
  constants_ = std::move(constants);
}

ModelConstants derive_constants(const HybridModel& model, double q, std::vector<double> a,
                                double l1, std::vector<double> n) {
  ModelConstants c;
  c.q = q;
  c.a = std::move(a);
  c.l1 = l1;
  c.l2 = l1 - 2.0;
  c.n = std::move(n);
  c.n_m = 0.0;
  for (double v : c.n) c.n_m = std::max(c.n_m, std::abs(v));

  const Eigen::VectorXd origin = Eigen::VectorXd::Zero(model.state_dim());
  c.b.resize(c.a.size());
  c.m = 0.0;
  for (int i = 1; i <= model.regime_count(); ++i) {
    const double f0 = model.drift(origin, i).squaredNorm();
    const double g0 = model.diffusion(origin, i).squaredNorm();
    c.b[static_cast<std::size_t>(i - 1)] = 4.0 * c.a[static_cast<std::size_t>(i - 1)] +
                                           2.0 * std::max(f0, g0);
    c.m = std::max(c.m, f0 + (c.l1 * c.l2 / 2.0) * g0);
  }
  c.validate(model.regime_count());
  return c;
}

double max_step_size(const ModelConstants& constants) { return 1.0 / (constants.n_m + 2.0); }

void SamplingBox::validate() const {
  if (lo.size() != hi.size() || lo.size() == 0)
    throw Error(Errc::degenerate_box, "bounds must be nonempty and of equal dimension");
  for (int d = 0; d < lo.size(); ++d) {
    if (!std::isfinite(lo(d)) || !std::isfinite(hi(d)) || !(lo(d) < hi(d)))
      throw Error(Errc::degenerate_box,
                  "dimension " + std::to_string(d + 1) + " has empty interior");
  }
}

AssumptionReport check_assumption3(const std::vector<double>& n, const Eigen::VectorXd& mu) {
  if (static_cast<int>(n.size()) != mu.size())
    throw std::invalid_argument("regime count mismatch between n and mu");
  double n_m = 0.0;
  for (double v : n) n_m = std::max(n_m, std::abs(v));

  AssumptionReport report;
  for (std::size_t j = 0; j < n.size(); ++j) {
    report.s1 += mu(static_cast<int>(j)) * (n[j] + 1.0) / (1.0 - (n[j] + 1.0) / (n_m + 2.0));
    report.s2 += mu(static_cast<int>(j)) * n[j] / (1.0 - n[j] / (n_m + 2.0));
  }
  report.lambda1 = -report.s1;
  report.lambda2 = -report.s2;
  report.passes = report.s1 < 0.0 && report.s2 < 0.0;
  report.max_step = 1.0 / (n_m + 2.0);
  return report;
}

ScanReport scan_lipschitz(const HybridModel& model, const ModelConstants& constants,
                          const SamplingBox& box, std::int64_t pairs, std::uint64_t seed) {
  box.validate();
  constants.validate(model.regime_count());
  ScanReport report;
  Eigen::VectorXd x, y;
  for (std::int64_t s = 0; s < pairs; ++s) {
    sample_pair(box, seed, static_cast<std::uint64_t>(s), x, y);
    const double d2 = (x - y).squaredNorm();
    if (d2 < 1e-300) continue;
    const double shape = 1.0 + std::pow(x.norm(), constants.q - 2.0) +
                         std::pow(y.norm(), constants.q - 2.0);
    for (int i = 1; i <= model.regime_count(); ++i) {
      const double fd = (model.drift(x, i) - model.drift(y, i)).squaredNorm();
      const double gd = sq_norm_diff(model.diffusion(x, i), model.diffusion(y, i));
      const double lhs = std::max(fd, gd);
      const double rhs = constants.a[static_cast<std::size_t>(i - 1)] * shape * d2;
      require_finite(lhs, "pairwise growth check");
      ++report.checked;
      if (lhs > rhs + kScanTolerance * (1.0 + d2)) record_violation(report, x, y, i, lhs, rhs);
    }
  }
  return report;
}

ScanReport scan_growth(const HybridModel& model, const ModelConstants& constants,
                       const SamplingBox& box, std::int64_t samples, std::uint64_t seed) {
  box.validate();
  constants.validate(model.regime_count());
  ScanReport report;
  Eigen::VectorXd x;
  for (std::int64_t s = 0; s < samples; ++s) {
    sample_point(box, seed, static_cast<std::uint64_t>(s), kRoleX, x);
    const double nx2 = x.squaredNorm();
    for (int i = 1; i <= model.regime_count(); ++i) {
      const double lhs =
          std::max(model.drift(x, i).squaredNorm(), model.diffusion(x, i).squaredNorm());
      const double rhs = constants.b[static_cast<std::size_t>(i - 1)] *
                         (1.0 + std::pow(x.norm(), constants.q));
      require_finite(lhs, "one-point growth check");
      ++report.checked;
      if (lhs > rhs + kScanTolerance * (1.0 + nx2)) record_violation(report, x, x, i, lhs, rhs);
    }
  }
  return report;
}

ScanReport scan_monotonicity(const HybridModel& model, const ModelConstants& constants,
                             const SamplingBox& box, std::int64_t pairs, std::uint64_t seed) {
  box.validate();
  constants.validate(model.regime_count());
  ScanReport report;
  Eigen::VectorXd x, y;
  for (std::int64_t s = 0; s < pairs; ++s) {
    sample_pair(box, seed, static_cast<std::uint64_t>(s), x, y);
    const Eigen::VectorXd diff = x - y;
    const double d2 = diff.squaredNorm();
    if (d2 < 1e-300) continue;
    for (int i = 1; i <= model.regime_count(); ++i) {
      const double inner = diff.dot(model.drift(x, i) - model.drift(y, i));
      const double gd = sq_norm_diff(model.diffusion(x, i), model.diffusion(y, i));
      const double lhs = 2.0 * inner + constants.l1 * gd;
      const double rhs = constants.n[static_cast<std::size_t>(i - 1)] * d2;
      require_finite(lhs, "one-sided slope check");
      ++report.checked;
      if (lhs > rhs + kScanTolerance * (1.0 + d2)) record_violation(report, x, y, i, lhs, rhs);
    }
  }
  return report;
}

ScanReport scan_dissipativity(const HybridModel& model, const ModelConstants& constants,
                              const SamplingBox& box, std::int64_t samples, std::uint64_t seed) {
  box.validate();
  constants.validate(model.regime_count());
  ScanReport report;
  Eigen::VectorXd x;
  for (std::int64_t s = 0; s < samples; ++s) {
    sample_point(box, seed, static_cast<std::uint64_t>(s), kRoleX, x);
    const double nx2 = x.squaredNorm();
    for (int i = 1; i <= model.regime_count(); ++i) {
      const double lhs = 2.0 * x.dot(model.drift(x, i)) +
                         constants.l2 * model.diffusion(x, i).squaredNorm();
      const double rhs = constants.m + (1.0 + constants.n[static_cast<std::size_t>(i - 1)]) * nx2;
      require_finite(lhs, "dissipativity check");
      ++report.checked;
      if (lhs > rhs + kScanTolerance * (1.0 + nx2)) record_violation(report, x, x, i, lhs, rhs);
    }
  }
  return report;
}

std::vector<double> estimate_monotonicity(const HybridModel& model, double l1,
                                          const SamplingBox& box, std::int64_t samples,
                                          std::uint64_t seed) {
  box.validate();
  if (samples < 2) throw std::invalid_argument("need at least 2 samples");
  std::vector<double> n_hat(static_cast<std::size_t>(model.regime_count()),
                            -std::numeric_limits<double>::infinity());
  Eigen::VectorXd x, y;
  for (std::int64_t s = 0; s < samples; ++s) {
    sample_pair(box, seed, static_cast<std::uint64_t>(s), x, y);
    const Eigen::VectorXd diff = x - y;
    const double d2 = diff.squaredNorm();
    if (d2 < 1e-300) continue;
    for (int i = 1; i <= model.regime_count(); ++i) {
      const double inner = diff.dot(model.drift(x, i) - model.drift(y, i));
      const double gd = sq_norm_diff(model.diffusion(x, i), model.diffusion(y, i));
      const double quotient = (2.0 * inner + l1 * gd) / d2;
      require_finite(quotient, "slope quotient");
      auto& best = n_hat[static_cast<std::size_t>(i - 1)];
      best = std::max(best, quotient);
    }
  }
  return n_hat;
}

LipschitzEstimate estimate_polynomial_lipschitz(const HybridModel& model, const SamplingBox& box,
                                                std::int64_t samples, std::uint64_t seed) {
  box.validate();
  if (samples < 2) throw std::invalid_argument("need at least 2 samples");
  constexpr int kMinQ = 2;
  constexpr int kMaxQ = 12;
  constexpr double kStableGrowth = 1.5;

  SamplingBox half;
  half.lo = 0.5 * (box.lo + box.hi) - 0.25 * (box.hi - box.lo);
  half.hi = 0.5 * (box.lo + box.hi) + 0.25 * (box.hi - box.lo);

  const int regimes = model.regime_count();
  // sup over sampled pairs of the quotient, per box, exponent and regime
  const auto sup_quotients = [&](const SamplingBox& domain) {
    std::vector<std::vector<double>> sup(kMaxQ + 1, std::vector<double>(
                                                        static_cast<std::size_t>(regimes), 0.0));
    Eigen::VectorXd x, y;
    for (std::int64_t s = 0; s < samples; ++s) {
      sample_pair(domain, seed, static_cast<std::uint64_t>(s), x, y);
      const double d2 = (x - y).squaredNorm();
      if (d2 < 1e-300) continue;
      const double nx = x.norm();
      const double ny = y.norm();
      for (int i = 1; i <= regimes; ++i) {
        const double fd = (model.drift(x, i) - model.drift(y, i)).squaredNorm();
        const double gd = sq_norm_diff(model.diffusion(x, i), model.diffusion(y, i));
        const double num = std::max(fd, gd);
        require_finite(num, "growth quotient");
        for (int q = kMinQ; q <= kMaxQ; ++q) {
          const double shape = 1.0 + std::pow(nx, q - 2.0) + std::pow(ny, q - 2.0);
          auto& best = sup[static_cast<std::size_t>(q)][static_cast<std::size_t>(i - 1)];
          best = std::max(best, num / (shape * d2));
        }
      }
    }
    return sup;
  };

  const auto sup_full = sup_quotients(box);
  const auto sup_half = sup_quotients(half);

  LipschitzEstimate estimate;
  for (int q = kMinQ; q <= kMaxQ; ++q) {
    bool stable = true;
    for (int i = 0; i < regimes && stable; ++i) {
      const double full = sup_full[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)];
      const double halved = sup_half[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)];
      if (full <= 1e-12) continue;  // flat coefficient functions
      stable = halved > 1e-12 && full <= kStableGrowth * halved;
    }
    if (stable || q == kMaxQ) {
      estimate.q_hat = q;
      estimate.a_hat = sup_full[static_cast<std::size_t>(q)];
      for (int i = 0; i < regimes; ++i) {
        auto& value = estimate.a_hat[static_cast<std::size_t>(i)];
        value = std::max(value, sup_half[static_cast<std::size_t>(q)][static_cast<std::size_t>(i)]);
      }
      break;
    }
  }
  return estimate;
}

HybridModel make_polynomial_model(const PolynomialModel& spec) {
  if (spec.state_dim < 1 || spec.noise_dim < 1 || spec.regime_count < 1)
    throw std::invalid_argument("polynomial model dimensions must be positive");
  const auto regimes = static_cast<std::size_t>(spec.regime_count);
  const auto dim = static_cast<std::size_t>(spec.state_dim);
  const auto noise = static_cast<std::size_t>(spec.noise_dim);
  if (spec.drift.size() != regimes)
    throw std::invalid_argument("drift: one component list per regime required");
  if (spec.diffusion.size() != regimes)
    throw std::invalid_argument("diffusion: one matrix per regime required");
  for (std::size_t r = 0; r < regimes; ++r) {
    if (spec.drift[r].size() != dim)
      throw std::invalid_argument("drift: component count != state dimension");
    for (std::size_t c = 0; c < dim; ++c)
      validate_polynomial(spec.drift[r][c], spec.state_dim, "drift");
    if (spec.diffusion[r].size() != dim)
      throw std::invalid_argument("diffusion: row count != state dimension");
    for (std::size_t row = 0; row < dim; ++row) {
      if (spec.diffusion[r][row].size() != noise)
        throw std::invalid_argument("diffusion: column count != noise dimension");
      for (std::size_t col = 0; col < noise; ++col)
        validate_polynomial(spec.diffusion[r][row][col], spec.state_dim, "diffusion");
    }
  }

  // Precomputed partials give the stepper an analytic Jacobian.
  auto jacobian_table = std::make_shared<std::vector<std::vector<std::vector<Polynomial>>>>();
  jacobian_table->resize(regimes);
  for (std::size_t r = 0; r < regimes; ++r) {
    (*jacobian_table)[r].resize(dim);
    for (std::size_t c = 0; c < dim; ++c) {
      (*jacobian_table)[r][c].resize(dim);
      for (std::size_t d = 0; d < dim; ++d)
        (*jacobian_table)[r][c][d] = differentiate(spec.drift[r][c], static_cast<int>(d));
    }
  }

  auto drift_table = std::make_shared<std::vector<std::vector<Polynomial>>>(spec.drift);
  auto diffusion_table =
      std::make_shared<std::vector<std::vector<std::vector<Polynomial>>>>(spec.diffusion);

  DriftFn drift = [drift_table](const Eigen::VectorXd& x, int regime, Eigen::VectorXd& out) {
    const auto& components = (*drift_table)[static_cast<std::size_t>(regime - 1)];
    for (std::size_t c = 0; c < components.size(); ++c)
      out(static_cast<int>(c)) = eval_polynomial(components[c], x);
  };
  DiffusionFn diffusion = [diffusion_table](const Eigen::VectorXd& x, int regime,
                                            Eigen::MatrixXd& out) {
    const auto& rows = (*diffusion_table)[static_cast<std::size_t>(regime - 1)];
    for (std::size_t row = 0; row < rows.size(); ++row)
      for (std::size_t col = 0; col < rows[row].size(); ++col)
        out(static_cast<int>(row), static_cast<int>(col)) = eval_polynomial(rows[row][col], x);
  };
  DriftJacobianFn jacobian = [jacobian_table](const Eigen::VectorXd& x, int regime,
                                              Eigen::MatrixXd& out) {
    const auto& rows = (*jacobian_table)[static_cast<std::size_t>(regime - 1)];
    for (std::size_t row = 0; row < rows.size(); ++row)
      for (std::size_t col = 0; col < rows[row].size(); ++col)
        out(static_cast<int>(row), static_cast<int>(col)) = eval_polynomial(rows[row][col], x);
  };

  return HybridModel(spec.id, spec.state_dim, spec.noise_dim, spec.regime_count, std::move(drift),
                     std::move(diffusion), std::move(jacobian));
}

HybridModel builtin_model(const std::string& name) {
  if (name == "example41") {
    DriftFn drift = [](const Eigen::VectorXd& x, int regime, Eigen::VectorXd& out) {
      const double v = x(0);
      out(0) = regime == 1 ? 1.0 + v - 10.0 * v * v * v : 1.0 - 2.0 * v - 11.0 * v * v * v;
    };
    DiffusionFn diffusion = [](const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out) {
      const double v = x(0);
      out(0, 0) = regime == 1 ? v * v : -v * v;
    };
    DriftJacobianFn jacobian = [](const Eigen::VectorXd& x, int regime, Eigen::MatrixXd& out) {
      const double v = x(0);
      out(0, 0) = regime == 1 ? 1.0 - 30.0 * v * v : -2.0 - 33.0 * v * v;
    };
    return HybridModel("example41", 1, 1, 2, std::move(drift), std::move(diffusion),
                       std::move(jacobian));
  }
  throw std::invalid_argument("unknown builtin model '" + name + "'");
}

ModelConstants example41_constants(const HybridModel& model) {
  return derive_constants(model, 6.0, {900.0, 1089.0}, 5.0, {2.0, -4.0});
}

}  // namespace hybem::model
