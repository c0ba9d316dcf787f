#include "hybem/commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hybem/csv.hpp"
#include "hybem/errors.hpp"
#include "hybem/markov.hpp"
#include "hybem/measure.hpp"
#include "hybem/model.hpp"
#include "hybem/simulate.hpp"

namespace hybem::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string out_path(const ExperimentConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.output_dir);
  return (fs::path(cfg.output_dir) / name).string();
}

std::string provenance(const ExperimentConfig& cfg) {
  return io::provenance_line(cfg.hash_hex, cfg.seed);
}

json provenance_json(const ExperimentConfig& cfg) {
  return json{{"config_hash", cfg.hash_hex},
              {"master_seed", cfg.seed},
              {"artifact_version", io::kArtifactVersion}};
}

void write_json(const ExperimentConfig& cfg, const std::string& name, json j) {
  j["provenance"] = provenance_json(cfg);
  io::write_text_file(out_path(cfg, name), j.dump(2) + "\n");
}

sim::SimOptions sim_options(const ExperimentConfig& cfg) {
  sim::SimOptions o;
  o.solver = cfg.solver;
  o.allow_unstable_step = cfg.allow_unstable_step;
  return o;
}

measure::WassersteinOptions wasserstein_options(const ExperimentConfig& cfg) {
  measure::WassersteinOptions o;
  o.assignment_cap = cfg.wasserstein.assignment_cap;
  o.transport_cap = cfg.wasserstein.transport_cap;
  return o;
}

measure::BootstrapOptions bootstrap_options(const ExperimentConfig& cfg) {
  measure::BootstrapOptions o;
  o.subsample = cfg.wasserstein.subsample;
  o.resamples = cfg.wasserstein.resamples;
  o.seed = cfg.seed;
  o.workers = cfg.workers <= 0 ? 1 : cfg.workers;
  o.ot = wasserstein_options(cfg);
  return o;
}

measure::DensityOptions density_options(const ExperimentConfig& cfg) {
  measure::DensityOptions o;
  o.kind = cfg.density.kind == "kde" ? measure::DensityKind::kde
                                     : measure::DensityKind::histogram;
  o.bins = cfg.density.bins;
  o.bandwidth = cfg.density.bandwidth;
  o.grid_cells = cfg.density.grid_cells;
  return o;
}

std::vector<std::string> state_header(int state_dim) {
  std::vector<std::string> names;
  for (int c = 0; c < state_dim; ++c) names.push_back("x" + std::to_string(c));
  return names;
}

measure::EmpiricalMeasure snapshot_measure(const sim::SnapshotEnsemble& snap) {
  return measure::uniform_measure(snap.states, snap.regimes);
}

/// First and second half of an ensemble, by path order; two independent
/// estimates of the same law for the noise floor.
std::pair<measure::EmpiricalMeasure, measure::EmpiricalMeasure> half_split(
    const sim::SnapshotEnsemble& snap) {
  const auto n = snap.states.rows();
  const auto half = n / 2;
  if (half < 1) throw Error(Errc::empty_sample, "ensemble too small to split for a noise floor");
  Eigen::MatrixXd a = snap.states.topRows(half);
  Eigen::MatrixXd b = snap.states.bottomRows(n - half);
  std::vector<int> ra(snap.regimes.begin(), snap.regimes.begin() + half);
  std::vector<int> rb(snap.regimes.begin() + half, snap.regimes.end());
  return {measure::uniform_measure(a, ra), measure::uniform_measure(b, rb)};
}

struct WpEstimate {
  double w = 0.0;
  double sd = 0.0;
  std::string estimator;  // "exact" or "bootstrap"
  measure::BootstrapResult bootstrap;
  std::vector<measure::PlanEntry> plan;  // only for exact estimates
};

/// Point estimate is the exact distance whenever the instance fits the caps,
/// otherwise the bootstrap mean; the spread always comes from the bootstrap.
WpEstimate estimate_wp(const ExperimentConfig& cfg, const measure::EmpiricalMeasure& u,
                       const measure::EmpiricalMeasure& v) {
  WpEstimate est;
  est.bootstrap = measure::wasserstein_bootstrap(u, v, cfg.p, bootstrap_options(cfg));
  est.sd = est.bootstrap.sd;
  try {
    auto ot = measure::wasserstein_p(u, v, cfg.p, wasserstein_options(cfg));
    est.w = ot.cost;
    est.estimator = "exact";
    est.plan = std::move(ot.plan);
  } catch (const Error& e) {
    if (e.code() != Errc::size_cap_exceeded) throw;
    est.w = est.bootstrap.mean;
    est.estimator = "bootstrap";
  }
  return est;
}

void dump_plan(const ExperimentConfig& cfg, const std::string& name,
               const std::vector<measure::PlanEntry>& plan) {
  io::CsvFile csv(out_path(cfg, name), provenance(cfg));
  csv.row({"from", "to", "mass"});
  for (const auto& e : plan)
    csv.row({std::to_string(e.from), std::to_string(e.to), io::format_double(e.mass)});
  csv.close();
}

json scan_json(const model::ScanReport& scan) {
  return json{{"checked", scan.checked}, {"violations", scan.violations}};
}

std::string fmt(double v) { return io::format_double(v); }

/// Scalar K-S between two ensembles: per-component statistics, keeping the
/// component with the largest D (exactly the scalar test in one dimension).
measure::KSResult ensemble_ks(const sim::SnapshotEnsemble& a, const sim::SnapshotEnsemble& b) {
  measure::KSResult best;
  best.p_value = 1.0;
  const int dim = static_cast<int>(a.states.cols());
  for (int c = 0; c < dim; ++c) {
    std::vector<double> sa(static_cast<std::size_t>(a.states.rows()));
    std::vector<double> sb(static_cast<std::size_t>(b.states.rows()));
    for (Eigen::Index i = 0; i < a.states.rows(); ++i)
      sa[static_cast<std::size_t>(i)] = a.states(i, c);
    for (Eigen::Index i = 0; i < b.states.rows(); ++i)
      sb[static_cast<std::size_t>(i)] = b.states(i, c);
    const auto r = measure::ks_two_sample(sa, sb);
    if (c == 0 || r.d > best.d) best = r;
  }
  return best;
}

}  // namespace

int cmd_check(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.constants)
    throw Error(Errc::config_parse, "constants: required for the assumption check");
  const Runtime rt = build_runtime(cfg);
  const auto& constants = *rt.model.declared_constants();

  const Eigen::VectorXd mu = markov::stationary_distribution(rt.generator);
  auto report = model::check_assumption3(constants.n, mu);
  report.lipschitz = model::scan_lipschitz(rt.model, constants, rt.box, cfg.sampling.samples,
                                           cfg.sampling.seed);
  report.growth =
      model::scan_growth(rt.model, constants, rt.box, cfg.sampling.samples, cfg.sampling.seed);
  report.monotonicity = model::scan_monotonicity(rt.model, constants, rt.box,
                                                 cfg.sampling.samples, cfg.sampling.seed);
  report.dissipativity = model::scan_dissipativity(rt.model, constants, rt.box,
                                                   cfg.sampling.samples, cfg.sampling.seed);

  const bool scans_clean = report.lipschitz.violations == 0 && report.growth.violations == 0 &&
                           report.monotonicity.violations == 0 &&
                           report.dissipativity.violations == 0;
  const bool pass = report.passes && scans_clean;

  log << "S1 = " << fmt(report.s1) << "\n";
  log << "S2 = " << fmt(report.s2) << "\n";
  log << "lambda1 = " << fmt(report.lambda1) << "\n";
  log << "lambda2 = " << fmt(report.lambda2) << "\n";
  log << "max_step = " << fmt(report.max_step) << "\n";
  log << "regime balance: " << (report.passes ? "PASS" : "FAIL") << "\n";
  log << "scan lipschitz: " << report.lipschitz.violations << " violations in "
      << report.lipschitz.checked << "\n";
  log << "scan growth: " << report.growth.violations << " violations in " << report.growth.checked
      << "\n";
  log << "scan monotonicity: " << report.monotonicity.violations << " violations in "
      << report.monotonicity.checked << "\n";
  log << "scan dissipativity: " << report.dissipativity.violations << " violations in "
      << report.dissipativity.checked << "\n";
  log << "verdict: " << (pass ? "PASS" : "FAIL") << "\n";

  std::vector<double> mu_list(static_cast<std::size_t>(mu.size()));
  for (Eigen::Index i = 0; i < mu.size(); ++i) mu_list[static_cast<std::size_t>(i)] = mu(i);
  write_json(cfg, "check.json",
             json{{"s1", report.s1},
                  {"s2", report.s2},
                  {"lambda1", report.lambda1},
                  {"lambda2", report.lambda2},
                  {"max_step", report.max_step},
                  {"stationary_distribution", mu_list},
                  {"balance_passes", report.passes},
                  {"scans",
                   json{{"lipschitz", scan_json(report.lipschitz)},
                        {"growth", scan_json(report.growth)},
                        {"monotonicity", scan_json(report.monotonicity)},
                        {"dissipativity", scan_json(report.dissipativity)}}},
                  {"passes", pass}});
  return pass ? 0 : 3;
}

int cmd_simulate(const ExperimentConfig& cfg, std::ostream& log) {
  const Runtime rt = build_runtime(cfg);
  const auto opts = sim_options(cfg);
  for (std::size_t i = 0; i < cfg.initial_conditions.size(); ++i) {
    const auto& ic = cfg.initial_conditions[i];
    const auto traj =
        sim::simulate(rt.model, rt.generator, ic.x, ic.regime, cfg.dt,
                      static_cast<int>(cfg.steps),
                      markov::SeedRecord{cfg.seed, static_cast<std::uint64_t>(i)}, opts);

    const std::string name = "trajectory_" + std::to_string(i) + ".csv";
    io::CsvFile csv(out_path(cfg, name), provenance(cfg));
    std::vector<std::string> header{"step", "time"};
    for (const auto& h : state_header(rt.model.state_dim())) header.push_back(h);
    header.push_back("regime");
    csv.row(header);
    for (Eigen::Index k = 0; k < traj.states.rows(); ++k) {
      std::vector<std::string> cells{std::to_string(k), fmt(static_cast<double>(k) * cfg.dt)};
      for (Eigen::Index c = 0; c < traj.states.cols(); ++c)
        cells.push_back(fmt(traj.states(k, c)));
      cells.push_back(std::to_string(traj.chain.states[static_cast<std::size_t>(k)]));
      csv.row(cells);
    }
    csv.close();
    log << "wrote " << name << " (" << traj.states.rows() << " rows)\n";
  }
  return 0;
}

int cmd_invariant(const ExperimentConfig& cfg, std::ostream& log) {
  const Runtime rt = build_runtime(cfg);
  const auto& ic = cfg.initial_conditions.front();

  // One pass over the union of the density times and the K-S grid.
  std::vector<double> grid_times(static_cast<std::size_t>(cfg.ks.grid_points));
  for (int i = 0; i < cfg.ks.grid_points; ++i)
    grid_times[static_cast<std::size_t>(i)] = static_cast<double>(i) * cfg.ks.grid_step;

  std::map<std::int64_t, double> by_step;
  for (const double t : cfg.snapshot_times) by_step.emplace(sim::grid_step(t, cfg.dt), t);
  for (const double t : grid_times) by_step.emplace(sim::grid_step(t, cfg.dt), t);
  std::vector<double> times;
  std::map<std::int64_t, std::size_t> index_of_step;
  times.reserve(by_step.size());
  for (const auto& [step, t] : by_step) {
    index_of_step[step] = times.size();
    times.push_back(t);
  }

  const auto snaps = sim::ensemble_snapshots(rt.model, rt.generator, ic.x, ic.regime, cfg.dt,
                                             times, cfg.ensemble, cfg.seed, cfg.workers,
                                             sim_options(cfg));
  const auto snap_at = [&](double t) -> const sim::SnapshotEnsemble& {
    return snaps[index_of_step.at(sim::grid_step(t, cfg.dt))];
  };

  // K-S sequence between consecutive grid times.
  std::vector<measure::KSResult> pairs(grid_times.size() - 1);
  {
    io::CsvFile csv(out_path(cfg, "ks_sequence.csv"), provenance(cfg));
    csv.row({"pair", "time_a", "time_b", "statistic", "p_value"});
    for (std::size_t i = 0; i + 1 < grid_times.size(); ++i) {
      pairs[i] = ensemble_ks(snap_at(grid_times[i]), snap_at(grid_times[i + 1]));
      csv.row({std::to_string(i), fmt(grid_times[i]), fmt(grid_times[i + 1]), fmt(pairs[i].d),
               fmt(pairs[i].p_value)});
    }
    csv.close();
  }

  // t* = first grid time after which every consecutive p-value clears 0.05.
  std::ptrdiff_t last_low = -1;
  for (std::size_t i = 0; i < pairs.size(); ++i)
    if (!(pairs[i].p_value > 0.05)) last_low = static_cast<std::ptrdiff_t>(i);
  const auto first_clear = static_cast<std::size_t>(last_low + 1);
  const bool reached = first_clear < pairs.size();
  std::optional<double> t_star;
  if (reached) t_star = grid_times[first_clear];

  // Snapshot ensembles and density tables at the configured times.
  json snapshot_list = json::array();
  for (std::size_t j = 0; j < cfg.snapshot_times.size(); ++j) {
    const double t = cfg.snapshot_times[j];
    const auto& snap = snap_at(t);

    const std::string snap_name = "snapshot_t" + std::to_string(j) + ".csv";
    io::CsvFile csv(out_path(cfg, snap_name), provenance(cfg));
    std::vector<std::string> header{"path_id"};
    for (const auto& h : state_header(rt.model.state_dim())) header.push_back(h);
    header.push_back("regime");
    csv.row(header);
    for (Eigen::Index r = 0; r < snap.states.rows(); ++r) {
      std::vector<std::string> cells{std::to_string(snap.path_ids[static_cast<std::size_t>(r)])};
      for (Eigen::Index c = 0; c < snap.states.cols(); ++c) cells.push_back(fmt(snap.states(r, c)));
      cells.push_back(std::to_string(snap.regimes[static_cast<std::size_t>(r)]));
      csv.row(cells);
    }
    csv.close();

    json density_files = json::array();
    for (int c = 0; c < rt.model.state_dim(); ++c) {
      std::vector<double> samples(static_cast<std::size_t>(snap.states.rows()));
      for (Eigen::Index r = 0; r < snap.states.rows(); ++r)
        samples[static_cast<std::size_t>(r)] = snap.states(r, c);
      const auto table = measure::empirical_density(samples, density_options(cfg));

      const std::string dens_name =
          "density_t" + std::to_string(j) + "_x" + std::to_string(c) + ".csv";
      io::CsvFile dens(out_path(cfg, dens_name), provenance(cfg));
      dens.row({"cell_center", "density"});
      for (std::size_t cell = 0; cell < table.grid.size(); ++cell)
        dens.row({fmt(table.grid[cell]), fmt(table.value[cell])});
      dens.close();
      density_files.push_back(dens_name);
    }
    snapshot_list.push_back(json{{"index", j},
                                 {"time", t},
                                 {"file", snap_name},
                                 {"density_files", density_files},
                                 {"paths", snap.states.rows()}});
  }

  write_json(
      cfg, "invariant.json",
      json{{"t_star", reached ? json(*t_star) : json(nullptr)},
           {"stationarity_reached", reached},
           {"ks",
            json{{"grid_step", cfg.ks.grid_step},
                 {"grid_points", cfg.ks.grid_points},
                 {"pairs", pairs.size()},
                 {"sequence_file", "ks_sequence.csv"}}},
           {"snapshots", snapshot_list},
           {"terminal_time", grid_times.back()},
           {"ensemble", cfg.ensemble},
           {"dt", cfg.dt},
           {"protocol",
            "the long-run law estimate is the terminal-time ensemble once stationarity is "
            "flagged; t* is the first grid time after which every consecutive-pair K-S p-value "
            "exceeds 0.05"}});

  log << "t* = " << (reached ? fmt(*t_star) : std::string("not reached")) << "\n";
  log << "wrote ks_sequence.csv (" << pairs.size() << " pairs) and " << cfg.snapshot_times.size()
      << " snapshot(s)\n";
  return 0;
}

int cmd_initial_independence(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.initial_conditions.size() < 2)
    throw Error(Errc::config_parse,
                "initial_conditions: need at least 2 to compare terminal laws");
  if (cfg.snapshot_times.size() > 1)
    throw Error(Errc::config_parse,
                "snapshot_times: this command compares laws at one time; give at most one");
  const double t = cfg.snapshot_times.empty() ? 40.0 : cfg.snapshot_times.front();

  const Runtime rt = build_runtime(cfg);
  const auto opts = sim_options(cfg);

  std::vector<sim::SnapshotEnsemble> terminal;
  std::vector<measure::EmpiricalMeasure> laws;
  for (const auto& ic : cfg.initial_conditions) {
    auto snaps = sim::ensemble_snapshots(rt.model, rt.generator, ic.x, ic.regime, cfg.dt, {t},
                                         cfg.ensemble, cfg.seed, cfg.workers, opts);
    terminal.push_back(std::move(snaps.front()));
    laws.push_back(snapshot_measure(terminal.back()));
  }

  json pair_list = json::array();
  double max_pair = 0.0;
  for (std::size_t a = 0; a < laws.size(); ++a) {
    for (std::size_t b = a + 1; b < laws.size(); ++b) {
      const auto est = estimate_wp(cfg, laws[a], laws[b]);
      max_pair = std::max(max_pair, est.w);
      if (cfg.wasserstein.dump_plans && est.estimator == "exact")
        dump_plan(cfg, "plan_" + std::to_string(a) + "_" + std::to_string(b) + ".csv", est.plan);
      pair_list.push_back(json{{"i", a},
                               {"j", b},
                               {"w", est.w},
                               {"sd", est.sd},
                               {"estimator", est.estimator},
                               {"bootstrap_mean", est.bootstrap.mean}});
      log << "W(" << a << "," << b << ") = " << fmt(est.w) << " +/- " << fmt(est.sd) << " ("
          << est.estimator << ")\n";
    }
  }

  const auto halves = half_split(terminal.front());
  const auto floor_est = estimate_wp(cfg, halves.first, halves.second);
  log << "noise floor = " << fmt(floor_est.w) << " +/- " << fmt(floor_est.sd) << "\n";

  json j{{"time", t},
         {"ensemble", cfg.ensemble},
         {"p", cfg.p},
         {"pairs", pair_list},
         {"noise_floor", json{{"w", floor_est.w}, {"sd", floor_est.sd},
                              {"estimator", floor_est.estimator}}},
         {"max_pair_w", max_pair},
         {"note",
          "all ensembles share the driving noise streams per path index, so pairwise "
          "distances isolate the initial-condition effect; the noise floor is the distance "
          "between two independent halves of one ensemble"}};
  if (floor_est.w > 0.0) j["max_ratio_to_floor"] = max_pair / floor_est.w;
  write_json(cfg, "independence.json", std::move(j));
  return 0;
}

int cmd_coupling_decay(const ExperimentConfig& cfg, std::ostream& log) {
  if (cfg.initial_conditions.size() != 2)
    throw Error(Errc::config_parse,
                "initial_conditions: coupling decay needs exactly 2 initial data");
  if (cfg.constants) {
    const double limit = 4.0 / cfg.constants->q;
    if (!(cfg.p < limit))
      throw Error(Errc::config_parse,
                  "p: must be below 4/q = " + io::format_double(limit) +
                      " for the declared growth exponent");
  }
  const Runtime rt = build_runtime(cfg);
  const auto& a = cfg.initial_conditions[0];
  const auto& b = cfg.initial_conditions[1];
  const auto series = sim::coupled_decay_series(rt.model, rt.generator, a.x, a.regime, b.x,
                                                b.regime, cfg.p, cfg.dt,
                                                static_cast<int>(cfg.steps), cfg.ensemble,
                                                cfg.seed, cfg.workers, sim_options(cfg));

  {
    io::CsvFile csv(out_path(cfg, "decay.csv"), provenance(cfg));
    csv.row({"step", "time", "mean_dp"});
    for (std::size_t k = 0; k < series.value.size(); ++k)
      csv.row({std::to_string(k), fmt(static_cast<double>(k) * cfg.dt), fmt(series.value[k])});
    csv.close();
  }

  // The shared-noise coupling makes pair differences exactly zero after
  // meeting; once every pair has met the series is identically zero, so the
  // log-linear fit runs on the positive prefix only.
  std::size_t cut = series.value.size();
  for (std::size_t k = 0; k < series.value.size(); ++k) {
    if (!(series.value[k] > 0.0)) {
      cut = k;
      break;
    }
  }

  json j{{"p", cfg.p},
         {"dt", cfg.dt},
         {"pairs", series.requested_paths},
         {"surviving_pairs", series.surviving_paths},
         {"met_by_end", series.met_by_end},
         {"series_length", series.value.size()},
         {"series_file", "decay.csv"},
         {"truncated_at", cut < series.value.size() ? json(cut) : json(nullptr)}};

  std::optional<measure::SlopeFit> fit;
  std::string skip_reason;
  if (cut == 0) {
    skip_reason =
        "NonPositiveValues: the series starts at zero (identical initial data); nothing to fit";
  } else {
    try {
      const std::vector<double> prefix(series.value.begin(),
                                       series.value.begin() + static_cast<std::ptrdiff_t>(cut));
      fit = measure::decay_slope(prefix, cfg.dt, cfg.burn_in);
    } catch (const Error& e) {
      if (e.code() != Errc::non_positive_values && e.code() != Errc::too_few_points) throw;
      skip_reason = e.what();
    }
  }

  if (fit) {
    j["fit"] = json{{"slope", fit->slope},
                    {"intercept", fit->intercept},
                    {"r_squared", fit->r_squared},
                    {"points", fit->points},
                    {"burn_in", cfg.burn_in}};
    j["gamma_hat"] = -fit->slope;
    log << "gamma_hat = " << fmt(-fit->slope) << " (r^2 = " << fmt(fit->r_squared) << ", "
        << fit->points << " points)\n";
  } else {
    j["fit"] = nullptr;
    j["fit_skipped"] = skip_reason;
    log << "fit skipped: " << skip_reason << "\n";
  }
  log << series.met_by_end << " of " << series.surviving_paths << " pairs met by the end\n";
  write_json(cfg, "coupling.json", std::move(j));
  return 0;
}

int cmd_wasserstein_order(const ExperimentConfig& cfg, std::ostream& log) {
  if (!cfg.order_fit.present)
    throw Error(Errc::config_parse, "order_fit: required for the order command");
  const Runtime rt = build_runtime(cfg);
  const auto& ic = cfg.initial_conditions.front();
  const double horizon = cfg.order_fit.horizon;
  const auto opts = sim_options(cfg);

  const auto terminal_law = [&](double dt) {
    auto snaps = sim::ensemble_snapshots(rt.model, rt.generator, ic.x, ic.regime, dt, {horizon},
                                         cfg.ensemble, cfg.seed, cfg.workers, opts);
    return std::move(snaps.front());
  };

  const auto ref_snap = terminal_law(cfg.order_fit.dt_ref);
  const auto ref_law = snapshot_measure(ref_snap);

  const auto halves = half_split(ref_snap);
  const auto floor_est = estimate_wp(cfg, halves.first, halves.second);
  log << "noise floor = " << fmt(floor_est.w) << " +/- " << fmt(floor_est.sd) << "\n";

  // Coarse-to-fine order: deterministic output layout regardless of config
  // ordering of the dt list.
  std::vector<double> dts = cfg.order_fit.dt_list;
  std::sort(dts.begin(), dts.end(), std::greater<>());

  json entries = json::array();
  std::vector<WpEstimate> estimates;
  bool noise_limited = false;
  for (const double dt : dts) {
    const auto law = snapshot_measure(terminal_law(dt));
    auto est = estimate_wp(cfg, law, ref_law);
    noise_limited = noise_limited || est.w < 2.0 * floor_est.w;
    entries.push_back(json{{"dt", dt},
                           {"w", est.w},
                           {"sd", est.sd},
                           {"estimator", est.estimator}});
    log << "dt = " << fmt(dt) << ": W = " << fmt(est.w) << " +/- " << fmt(est.sd) << "\n";
    estimates.push_back(std::move(est));
  }

  // Least squares slope of log W against log dt, plus a bootstrap spread from
  // refitting each resample.
  const auto fit_slope = [&](const std::vector<double>& w) -> std::optional<double> {
    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < dts.size(); ++i) {
      if (!(w[i] > 0.0)) return std::nullopt;
      sx += std::log(dts[i]);
      sy += std::log(w[i]);
    }
    const double xbar = sx / static_cast<double>(dts.size());
    const double ybar = sy / static_cast<double>(dts.size());
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < dts.size(); ++i) {
      const double dx = std::log(dts[i]) - xbar;
      sxx += dx * dx;
      sxy += dx * (std::log(w[i]) - ybar);
    }
    return sxy / sxx;
  };

  std::vector<double> w_points;
  for (const auto& est : estimates) w_points.push_back(est.w);
  const auto slope = fit_slope(w_points);

  std::optional<double> slope_sd;
  if (slope) {
    const auto resamples = static_cast<std::size_t>(cfg.wasserstein.resamples);
    std::vector<double> slopes;
    for (std::size_t r = 0; r < resamples; ++r) {
      std::vector<double> w(dts.size());
      for (std::size_t i = 0; i < dts.size(); ++i) w[i] = estimates[i].bootstrap.values[r];
      if (const auto s = fit_slope(w)) slopes.push_back(*s);
    }
    if (slopes.size() >= 2) {
      double mean = 0.0;
      for (const double s : slopes) mean += s;
      mean /= static_cast<double>(slopes.size());
      double var = 0.0;
      for (const double s : slopes) var += (s - mean) * (s - mean);
      slope_sd = std::sqrt(var / static_cast<double>(slopes.size() - 1));
    }
  }

  const std::string verdict = noise_limited ? "noise-floor-limited" : "ok";
  json j{{"horizon", horizon},
         {"ensemble", cfg.ensemble},
         {"p", cfg.p},
         {"nominal_rate", cfg.p / 2.0},
         {"dt_ref", cfg.order_fit.dt_ref},
         {"entries", entries},
         {"noise_floor", json{{"w", floor_est.w}, {"sd", floor_est.sd}}},
         {"slope", slope ? json(*slope) : json(nullptr)},
         {"slope_sd", slope_sd ? json(*slope_sd) : json(nullptr)},
         {"verdict", verdict}};
  if (noise_limited)
    j["warning"] =
        "some distances sit within 2x the noise floor; the fitted order is unreliable at this "
        "ensemble size";
  write_json(cfg, "order.json", std::move(j));

  log << "slope = " << (slope ? fmt(*slope) : std::string("undefined"))
      << (slope_sd ? " +/- " + fmt(*slope_sd) : std::string()) << " (" << verdict << ")\n";
  return 0;
}

int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::config_parse:
    case Errc::unstable_step:
    case Errc::off_grid_time:
    case Errc::invalid_p:
    case Errc::size_cap_exceeded:
    case Errc::degenerate_box:
      return 2;
    default:
      return 4;
  }
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Regime-switching SDE lab: drift-implicit Euler-Maruyama simulation and "
               "long-run measure statistics"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_value = 0;
  int workers_value = 0;
  std::string out_value;
  double tol_value = 0.0;
  int newton_iters_value = 0;
  bool allow_unstable = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file (JSON)")->required();
    sub->add_option("--seed", seed_value, "master seed override");
    sub->add_option("--workers", workers_value, "worker thread cap (0 = auto)");
    sub->add_option("--out", out_value, "output directory override");
    sub->add_option("--tol", tol_value, "implicit-solver residual tolerance override");
    sub->add_option("--max-newton-iters", newton_iters_value,
                    "implicit-solver Newton iteration cap override");
    sub->add_flag("--allow-unstable-step", allow_unstable,
                  "run even when dt is outside the declared stability range");
  };

  add_common(app.add_subcommand("check", "evaluate the model's structural conditions"));
  add_common(app.add_subcommand("simulate", "write one trajectory per initial condition"));
  add_common(app.add_subcommand(
      "invariant", "snapshot ensembles, density tables and the stationarity K-S sequence"));
  add_common(app.add_subcommand(
      "initial-independence", "pairwise terminal-law distances across initial conditions"));
  add_common(app.add_subcommand("coupling-decay",
                                "mean pair-difference decay and its fitted rate"));
  add_common(app.add_subcommand("wasserstein-order",
                                "terminal-law distance versus step size with a log-log fit"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  Overrides ov;
  if (sub->count("--seed") > 0) ov.seed = seed_value;
  if (sub->count("--workers") > 0) ov.workers = workers_value;
  if (sub->count("--out") > 0) ov.out = out_value;
  if (sub->count("--tol") > 0) ov.tol = tol_value;
  if (sub->count("--max-newton-iters") > 0) ov.max_newton_iters = newton_iters_value;
  ov.allow_unstable_step = allow_unstable;

  try {
    const auto cfg = load_config(config_path, ov);
    const std::string name = sub->get_name();
    if (name == "check") return cmd_check(cfg, std::cout);
    if (name == "simulate") return cmd_simulate(cfg, std::cout);
    if (name == "invariant") return cmd_invariant(cfg, std::cout);
    if (name == "initial-independence") return cmd_initial_independence(cfg, std::cout);
    if (name == "coupling-decay") return cmd_coupling_decay(cfg, std::cout);
    return cmd_wasserstein_order(cfg, std::cout);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace hybem::cli
