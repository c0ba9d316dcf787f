#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace hybem::measure {

/// One weighted atom of an empirical measure on R^n x regimes.
struct Atom {
  Eigen::VectorXd x;
  int regime = 1;
  double w = 0.0;
};

/// Normalized discrete measure: weights strictly positive, summing to one
/// within 1e-12 (checked with compensated summation so large ensembles pass).
struct EmpiricalMeasure {
  std::vector<Atom> atoms;

  void validate() const;
  [[nodiscard]] int state_dim() const;
};

/// Equal-weight measure over the rows of states.
EmpiricalMeasure uniform_measure(const Eigen::MatrixXd& states, const std::vector<int>& regimes);

/// Hybrid metric |x - y|^p + [i != j], p strictly inside (0,1).
double dp_distance(const Eigen::VectorXd& x, int i, const Eigen::VectorXd& y, int j, double p);

/// Exact minimum-cost perfect matching on a square cost matrix (shortest
/// augmenting paths with potentials).
struct AssignmentResult {
  double cost = 0.0;
  std::vector<int> col_of_row;
};
AssignmentResult solve_assignment(const Eigen::MatrixXd& cost);

struct PlanEntry {
  int from = 0;
  int to = 0;
  double mass = 0.0;
};

/// Exact transport between weight vectors on a dense cost matrix, by
/// successive shortest augmenting paths with node potentials. The solution is
/// checked against its own dual certificate before returning.
struct TransportResult {
  double cost = 0.0;
  std::vector<PlanEntry> plan;
};
TransportResult solve_transport(const Eigen::MatrixXd& cost, const Eigen::VectorXd& supply,
                                const Eigen::VectorXd& demand);

enum class OTMethod { assignment, min_cost_flow };

struct OTResult {
  double cost = 0.0;
  std::vector<PlanEntry> plan;
  OTMethod method = OTMethod::assignment;
};

struct WassersteinOptions {
  int assignment_cap = 4096;  // equal-size uniform inputs
  int transport_cap = 512;    // general weights, per side
};

/// Exact W_p under dp_distance. Equal-size uniform-weight inputs run through
/// the assignment solver; anything else through the transport solver. Inputs
/// past the caps raise SizeCapExceeded (subsample first, see
/// subsample_measure).
OTResult wasserstein_p(const EmpiricalMeasure& u, const EmpiricalMeasure& v, double p,
                       const WassersteinOptions& opts = {});

/// Draws `count` atoms with replacement, probability proportional to weight,
/// producing an equal-weight measure. Deterministic in (seed, resample, side).
EmpiricalMeasure subsample_measure(const EmpiricalMeasure& u, int count, std::uint64_t seed,
                                   std::uint64_t resample, std::uint64_t side);

struct BootstrapOptions {
  int subsample = 1024;  // atoms per side per resample, <= 2048
  int resamples = 8;
  std::uint64_t seed = 0;
  int workers = 1;
  WassersteinOptions ot;
};

/// W_p between seeded subsamples, repeated; reports mean, sample sd and the
/// per-resample values (merged by resample index, worker-count invariant).
struct BootstrapResult {
  double mean = 0.0;
  double sd = 0.0;
  std::vector<double> values;
};
BootstrapResult wasserstein_bootstrap(const EmpiricalMeasure& u, const EmpiricalMeasure& v,
                                      double p, const BootstrapOptions& opts = {});

/// Two-sample Kolmogorov-Smirnov: D by a merged ECDF scan, p-value from the
/// asymptotic Kolmogorov distribution at effective size na*nb/(na+nb).
struct KSResult {
  double d = 0.0;
  double p_value = 1.0;
};
KSResult ks_two_sample(const std::vector<double>& a, const std::vector<double>& b);

/// Upper tail Q(lambda) = P(K > lambda) of the Kolmogorov distribution,
/// series truncated at 100 terms with the small-lambda dual form.
double kolmogorov_q(double lambda);

enum class DensityKind { histogram, kde };

struct DensityOptions {
  DensityKind kind = DensityKind::histogram;
  int bins = 0;            // histogram cells; 0 picks Freedman-Diaconis
  double bandwidth = 0.0;  // kde bandwidth; 0 picks Silverman's rule
  int grid_cells = 400;    // kde evaluation cells
};

/// Cell-averaged density on a uniform grid; sum(value) * cell_width = 1
/// within 1e-6 by construction. Histogram cells hold exact counts; the kde
/// averages a Gaussian kernel mixture over each cell via CDF differences.
struct DensityTable {
  std::vector<double> grid;   // cell centers
  std::vector<double> value;  // cell-averaged density
  double cell_width = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};
DensityTable empirical_density(const std::vector<double>& samples,
                               const DensityOptions& opts = {});

/// Monte Carlo mean of |x|^order (order 1 or 2) with its standard error.
struct MomentResult {
  double value = 0.0;
  double se = 0.0;
};
MomentResult moment(const Eigen::MatrixXd& states, int order);

/// Least squares of log(value[k]) against k*dt on the post-burn-in window.
struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 1.0;
  int points = 0;
};
SlopeFit decay_slope(const std::vector<double>& value, double dt, double burn_in_fraction);

}  // namespace hybem::measure
