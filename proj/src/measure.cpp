#include "hybem/measure.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <thread>
#include <vector>

#include "hybem/errors.hpp"
#include "hybem/rng.hpp"

namespace hybem::measure {

namespace {

constexpr double kWeightTolerance = 1e-12;
constexpr double kPi = 3.14159265358979323846;

double kahan_sum(const std::vector<Atom>& atoms) {
  double sum = 0.0, carry = 0.0;
  for (const auto& a : atoms) {
    const double y = a.w - carry;
    const double t = sum + y;
    carry = (t - sum) - y;
    sum = t;
  }
  return sum;
}

void check_p(double p) {
  if (!(p > 0.0) || !(p < 1.0))
    throw Error(Errc::invalid_p, "p must lie strictly inside (0, 1)");
}

bool uniform_equal_sizes(const EmpiricalMeasure& u, const EmpiricalMeasure& v) {
  if (u.atoms.size() != v.atoms.size()) return false;
  const double w = 1.0 / static_cast<double>(u.atoms.size());
  for (const auto& a : u.atoms)
    if (std::abs(a.w - w) > kWeightTolerance) return false;
  for (const auto& a : v.atoms)
    if (std::abs(a.w - w) > kWeightTolerance) return false;
  return true;
}

Eigen::MatrixXd cost_matrix(const EmpiricalMeasure& u, const EmpiricalMeasure& v, double p) {
  Eigen::MatrixXd cost(u.atoms.size(), v.atoms.size());
  for (std::size_t i = 0; i < u.atoms.size(); ++i)
    for (std::size_t j = 0; j < v.atoms.size(); ++j)
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          dp_distance(u.atoms[i].x, u.atoms[i].regime, v.atoms[j].x, v.atoms[j].regime, p);
  return cost;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

/// Type-7 quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& s, double q) {
  const auto n = s.size();
  if (n == 1) return s[0];
  const double pos = q * static_cast<double>(n - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double frac = pos - static_cast<double>(lo);
  return s[lo] + frac * (s[hi] - s[lo]);
}

}  // namespace

void EmpiricalMeasure::validate() const {
  if (atoms.empty()) throw Error(Errc::empty_sample, "measure has no atoms");
  const auto dim = atoms.front().x.size();
  for (const auto& a : atoms) {
    if (!(a.w > 0.0)) throw std::invalid_argument("atom weights must be positive");
    if (a.regime < 1) throw std::invalid_argument("atom regimes must be >= 1");
    if (a.x.size() != dim) throw std::invalid_argument("atom dimensions must agree");
    if (!a.x.allFinite()) throw std::invalid_argument("atom states must be finite");
  }
  const double total = kahan_sum(atoms);
  if (std::abs(total - 1.0) > kWeightTolerance) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "weights sum to %.17g, not 1", total);
    throw std::invalid_argument(buf);
  }
}

int EmpiricalMeasure::state_dim() const {
  return atoms.empty() ? 0 : static_cast<int>(atoms.front().x.size());
}

EmpiricalMeasure uniform_measure(const Eigen::MatrixXd& states, const std::vector<int>& regimes) {
  const auto m = static_cast<std::size_t>(states.rows());
  if (m == 0) throw Error(Errc::empty_sample, "no atoms to build a measure from");
  if (regimes.size() != m)
    throw std::invalid_argument("regime list length must match the state rows");
  EmpiricalMeasure out;
  out.atoms.resize(m);
  const double w = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    out.atoms[i].x = states.row(static_cast<Eigen::Index>(i)).transpose();
    out.atoms[i].regime = regimes[i];
    out.atoms[i].w = w;
  }
  out.validate();
  return out;
}

double dp_distance(const Eigen::VectorXd& x, int i, const Eigen::VectorXd& y, int j, double p) {
  check_p(p);
  if (x.size() != y.size()) throw std::invalid_argument("points must share a dimension");
  const double d = (x - y).norm();
  return std::pow(d, p) + (i != j ? 1.0 : 0.0);
}

OTResult wasserstein_p(const EmpiricalMeasure& u, const EmpiricalMeasure& v, double p,
                       const WassersteinOptions& opts) {
  check_p(p);
  u.validate();
  v.validate();
  if (u.state_dim() != v.state_dim())
    throw std::invalid_argument("measures must live on the same state space");
  const auto na = static_cast<int>(u.atoms.size());
  const auto nb = static_cast<int>(v.atoms.size());

  OTResult out;
  if (uniform_equal_sizes(u, v)) {
    if (na > opts.assignment_cap) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "%d atoms exceed the assignment cap %d; subsample first "
                    "(subsample_measure / wasserstein_bootstrap)",
                    na, opts.assignment_cap);
      throw Error(Errc::size_cap_exceeded, buf);
    }
    const auto assignment = solve_assignment(cost_matrix(u, v, p));
    const double w = 1.0 / static_cast<double>(na);
    out.method = OTMethod::assignment;
    out.cost = assignment.cost * w;
    out.plan.reserve(static_cast<std::size_t>(na));
    for (int i = 0; i < na; ++i)
      out.plan.push_back({i, assignment.col_of_row[static_cast<std::size_t>(i)], w});
    return out;
  }

  if (na > opts.transport_cap || nb > opts.transport_cap) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%d x %d atoms exceed the transport cap %d; subsample first "
                  "(subsample_measure / wasserstein_bootstrap)",
                  na, nb, opts.transport_cap);
    throw Error(Errc::size_cap_exceeded, buf);
  }
  Eigen::VectorXd supply(na), demand(nb);
  for (int i = 0; i < na; ++i) supply(i) = u.atoms[static_cast<std::size_t>(i)].w;
  for (int j = 0; j < nb; ++j) demand(j) = v.atoms[static_cast<std::size_t>(j)].w;
  auto transport = solve_transport(cost_matrix(u, v, p), supply, demand);
  out.method = OTMethod::min_cost_flow;
  out.cost = transport.cost;
  out.plan = std::move(transport.plan);
  return out;
}

EmpiricalMeasure subsample_measure(const EmpiricalMeasure& u, int count, std::uint64_t seed,
                                   std::uint64_t resample, std::uint64_t side) {
  u.validate();
  if (count < 1) throw std::invalid_argument("subsample count must be at least 1");
  std::vector<double> cum(u.atoms.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < u.atoms.size(); ++i) {
    acc += u.atoms[i].w;
    cum[i] = acc;
  }
  cum.back() = 1.0;

  EmpiricalMeasure out;
  out.atoms.resize(static_cast<std::size_t>(count));
  const double w = 1.0 / static_cast<double>(count);
  for (int j = 0; j < count; ++j) {
    const double r = rng::uniform(seed, rng::Stream::subsample, resample, side,
                                  static_cast<std::uint32_t>(j));
    const auto it = std::lower_bound(cum.begin(), cum.end(), r);
    const auto idx = static_cast<std::size_t>(it - cum.begin());
    out.atoms[static_cast<std::size_t>(j)] = {u.atoms[idx].x, u.atoms[idx].regime, w};
  }
  return out;
}

BootstrapResult wasserstein_bootstrap(const EmpiricalMeasure& u, const EmpiricalMeasure& v,
                                      double p, const BootstrapOptions& opts) {
  check_p(p);
  u.validate();
  v.validate();
  if (opts.subsample < 1 || opts.subsample > 2048)
    throw std::invalid_argument("bootstrap subsample must lie in [1, 2048]");
  if (opts.resamples < 1) throw std::invalid_argument("at least one resample is required");

  BootstrapResult out;
  out.values.assign(static_cast<std::size_t>(opts.resamples), 0.0);
  const auto run_one = [&](int r) {
    const auto ua =
        subsample_measure(u, opts.subsample, opts.seed, static_cast<std::uint64_t>(r), 0);
    const auto ub =
        subsample_measure(v, opts.subsample, opts.seed, static_cast<std::uint64_t>(r), 1);
    out.values[static_cast<std::size_t>(r)] = wasserstein_p(ua, ub, p, opts.ot).cost;
  };

  const int workers = std::min(std::max(opts.workers, 1), opts.resamples);
  if (workers == 1) {
    for (int r = 0; r < opts.resamples; ++r) run_one(r);
  } else {
    std::atomic<int> next{0};
    const auto worker = [&] {
      for (;;) {
        const int r = next.fetch_add(1);
        if (r >= opts.resamples) return;
        run_one(r);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  double sum = 0.0;
  for (const double x : out.values) sum += x;
  out.mean = sum / static_cast<double>(opts.resamples);
  if (opts.resamples > 1) {
    double ss = 0.0;
    for (const double x : out.values) ss += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(ss / static_cast<double>(opts.resamples - 1));
  }
  return out;
}

double kolmogorov_q(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    // Dual theta series, accurate where the direct series converges slowly.
    const double y = std::exp(-kPi * kPi / (8.0 * lambda * lambda));
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
      const double e = static_cast<double>((2 * j - 1)) * static_cast<double>(2 * j - 1);
      const double term = std::pow(y, e);
      sum += term;
      if (term < 1e-300) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * kPi) / lambda * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * static_cast<double>(j) * static_cast<double>(j) *
                                 lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

KSResult ks_two_sample(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty() || b.empty()) throw Error(Errc::empty_sample, "both samples must be nonempty");
  std::vector<double> sa = a, sb = b;
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const auto na = static_cast<double>(sa.size());
  const auto nb = static_cast<double>(sb.size());

  KSResult out;
  std::size_t i = 0, j = 0;
  while (i < sa.size() || j < sb.size()) {
    // Advance past every copy of the smallest outstanding value before
    // comparing the ECDFs, so ties contribute a single evaluation point.
    double value;
    if (j >= sb.size() || (i < sa.size() && sa[i] <= sb[j]))
      value = sa[i];
    else
      value = sb[j];
    while (i < sa.size() && sa[i] == value) ++i;
    while (j < sb.size() && sb[j] == value) ++j;
    const double gap = std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb);
    out.d = std::max(out.d, gap);
  }
  const double ne = na * nb / (na + nb);
  out.p_value = kolmogorov_q(std::sqrt(ne) * out.d);
  return out;
}

DensityTable empirical_density(const std::vector<double>& samples, const DensityOptions& opts) {
  if (samples.empty()) throw Error(Errc::empty_sample, "cannot estimate a density from nothing");
  std::vector<double> s = samples;
  std::sort(s.begin(), s.end());
  for (const double x : s)
    if (!std::isfinite(x)) throw std::invalid_argument("samples must be finite");
  const auto n = static_cast<double>(s.size());
  const double iqr = quantile_sorted(s, 0.75) - quantile_sorted(s, 0.25);

  DensityTable out;
  if (opts.kind == DensityKind::histogram) {
    double lo = s.front(), hi = s.back();
    int bins;
    if (hi == lo) {
      // Degenerate sample: one unit-width cell carrying all the mass.
      lo -= 0.5;
      hi += 0.5;
      bins = 1;
    } else if (opts.bins > 0) {
      bins = opts.bins;
    } else if (iqr > 0.0) {
      const double fd_width = 2.0 * iqr / std::cbrt(n);
      bins = static_cast<int>(std::clamp(std::ceil((hi - lo) / fd_width), 1.0, 10000.0));
    } else {
      bins = static_cast<int>(std::clamp(std::ceil(std::sqrt(n)), 1.0, 10000.0));
    }
    const double width = (hi - lo) / bins;
    std::vector<std::int64_t> counts(static_cast<std::size_t>(bins), 0);
    for (const double x : s) {
      auto c = static_cast<std::int64_t>((x - lo) / width);
      c = std::clamp<std::int64_t>(c, 0, bins - 1);  // hi lands in the last cell
      ++counts[static_cast<std::size_t>(c)];
    }
    out.lo = lo;
    out.hi = hi;
    out.cell_width = width;
    out.grid.resize(static_cast<std::size_t>(bins));
    out.value.resize(static_cast<std::size_t>(bins));
    for (int c = 0; c < bins; ++c) {
      out.grid[static_cast<std::size_t>(c)] = lo + (c + 0.5) * width;
      out.value[static_cast<std::size_t>(c)] =
          static_cast<double>(counts[static_cast<std::size_t>(c)]) / (n * width);
    }
    return out;
  }

  // Gaussian kde, cell-averaged through kernel CDF differences so the table
  // integrates to one regardless of the grid.
  if (opts.grid_cells < 1) throw std::invalid_argument("grid_cells must be at least 1");
  double h = opts.bandwidth;
  if (!(h > 0.0)) {
    double mean = 0.0;
    for (const double x : s) mean += x;
    mean /= n;
    double ss = 0.0;
    for (const double x : s) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / std::max(n - 1.0, 1.0));
    const double a = iqr / 1.34;
    double scale = std::min(sd, a);
    if (!(scale > 0.0)) scale = std::max(sd, a);
    h = 0.9 * scale * std::pow(n, -0.2);
    if (!(h > 0.0)) h = 1e-9 * (1.0 + std::abs(s.front()));  // constant sample: a spike
  }
  const double lo = s.front() - 6.0 * h;
  const double hi = s.back() + 6.0 * h;
  const int cells = opts.grid_cells;
  const double width = (hi - lo) / cells;
  std::vector<double> mass(static_cast<std::size_t>(cells), 0.0);
  for (const double x : s) {
    // Cells beyond ten bandwidths contribute below 1e-22 and are skipped.
    const auto first =
        std::clamp(static_cast<std::int64_t>((x - 10.0 * h - lo) / width), std::int64_t{0},
                   static_cast<std::int64_t>(cells) - 1);
    const auto last =
        std::clamp(static_cast<std::int64_t>((x + 10.0 * h - lo) / width), std::int64_t{0},
                   static_cast<std::int64_t>(cells) - 1);
    double cdf_left = normal_cdf((lo + static_cast<double>(first) * width - x) / h);
    for (std::int64_t c = first; c <= last; ++c) {
      const double cdf_right = normal_cdf((lo + static_cast<double>(c + 1) * width - x) / h);
      mass[static_cast<std::size_t>(c)] += cdf_right - cdf_left;
      cdf_left = cdf_right;
    }
  }
  out.lo = lo;
  out.hi = hi;
  out.cell_width = width;
  out.grid.resize(static_cast<std::size_t>(cells));
  out.value.resize(static_cast<std::size_t>(cells));
  for (int c = 0; c < cells; ++c) {
    out.grid[static_cast<std::size_t>(c)] = lo + (c + 0.5) * width;
    out.value[static_cast<std::size_t>(c)] = mass[static_cast<std::size_t>(c)] / (n * width);
  }
  return out;
}

MomentResult moment(const Eigen::MatrixXd& states, int order) {
  if (states.rows() == 0) throw Error(Errc::empty_sample, "no samples for the moment");
  if (order != 1 && order != 2) throw std::invalid_argument("order must be 1 or 2");
  const auto n = static_cast<double>(states.rows());
  std::vector<double> vals(static_cast<std::size_t>(states.rows()));
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    const double norm = states.row(i).norm();
    vals[static_cast<std::size_t>(i)] = order == 1 ? norm : norm * norm;
  }
  MomentResult out;
  for (const double v : vals) out.value += v;
  out.value /= n;
  if (states.rows() > 1) {
    double ss = 0.0;
    for (const double v : vals) ss += (v - out.value) * (v - out.value);
    out.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

SlopeFit decay_slope(const std::vector<double>& value, double dt, double burn_in_fraction) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(burn_in_fraction >= 0.0) || !(burn_in_fraction < 1.0))
    throw std::invalid_argument("burn-in fraction must lie in [0, 1)");
  const auto len = value.size();
  const auto start = static_cast<std::size_t>(burn_in_fraction * static_cast<double>(len));
  if (len < start + 3)
    throw Error(Errc::too_few_points, "need at least 3 post-burn-in points to fit a slope");
  for (std::size_t k = start; k < len; ++k) {
    if (!(value[k] > 0.0))
      throw Error(Errc::non_positive_values,
                  "post-burn-in series values must be positive to take logs (index " +
                      std::to_string(k) + ")");
  }

  const auto m = static_cast<double>(len - start);
  double st = 0.0, sy = 0.0;
  for (std::size_t k = start; k < len; ++k) {
    st += static_cast<double>(k) * dt;
    sy += std::log(value[k]);
  }
  const double tbar = st / m, ybar = sy / m;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = start; k < len; ++k) {
    const double dx = static_cast<double>(k) * dt - tbar;
    const double dy = std::log(value[k]) - ybar;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  SlopeFit out;
  out.points = static_cast<int>(len - start);
  out.slope = sxy / sxx;
  out.intercept = ybar - out.slope * tbar;
  const double ss_res = syy - out.slope * sxy;
  // A log series that is constant to rounding noise has nothing to explain;
  // report a perfect fit instead of dividing noise by noise.
  const double noise_floor = 1e-14 * (1.0 + std::abs(ybar));
  const double degenerate = m * noise_floor * noise_floor;
  out.r_squared = syy <= degenerate ? 1.0 : std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return out;
}

}  // namespace hybem::measure
