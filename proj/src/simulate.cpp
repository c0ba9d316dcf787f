#include "hybem/simulate.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <string>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include "hybem/errors.hpp"
#include "hybem/rng.hpp"

namespace hybem::sim {

namespace {

// Paths are claimed in blocks of this size; per-block partial sums reduced in
// block order keep every ensemble statistic independent of the worker count.
constexpr std::int64_t kBlockSize = 64;
constexpr double kGridTolerance = 1e-9;
constexpr double kFailureBudget = 1e-3;  // fraction of paths allowed to fail

void validate_run(const model::HybridModel& model, const markov::Generator& generator,
                  const Eigen::VectorXd& x0, int i0, double dt, std::int64_t steps,
                  const SimOptions& opts) {
  opts.solver.validate();
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
  if (x0.size() != model.state_dim())
    throw std::invalid_argument("initial state dimension does not match the model");
  if (i0 < 1 || i0 > model.regime_count())
    throw std::invalid_argument("initial regime out of range");
  if (generator.state_count() != model.regime_count())
    throw std::invalid_argument("generator state count does not match the model");
  if (!opts.allow_unstable_step && model.declared_constants().has_value()) {
    const double bound = model::max_step_size(*model.declared_constants());
    if (dt >= bound) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "dt = %.12g is not below the admissible bound 1/(n_M + 2) = %.12g", dt, bound);
      throw Error(Errc::unstable_step, buf);
    }
  }
}

// Error::what() already carries the category prefix; strip it before
// re-wrapping so the step-index annotation does not double it.
std::string strip_category(const Error& e) {
  const std::string text = e.what();
  const std::string prefix = std::string(errc_name(e.code())) + ": ";
  return text.rfind(prefix, 0) == 0 ? text.substr(prefix.size()) : text;
}

[[noreturn]] void rethrow_with_step(const Error& e, std::int64_t step) {
  const std::string message = strip_category(e) + " (step " + std::to_string(step) + ")";
  const auto* solve = dynamic_cast<const SolveError*>(&e);
  if (solve != nullptr)
    throw SolveError(e.code(), message, solve->best_iterate(), solve->residual());
  throw Error(e.code(), message);
}

// Per-worker scratch; one instance per thread, reused across paths.
struct Workspace {
  Eigen::VectorXd x;
  Eigen::VectorXd v;
  Eigen::VectorXd db;
  Eigen::MatrixXd gmat;

  Workspace(int state_dim, int noise_dim)
      : x(state_dim), v(state_dim), db(noise_dim), gmat(state_dim, noise_dim) {}
};

// One path of the scheme over a precomputed chain. observe(k, x, regime) runs
// for every index including k = 0; solver errors carry the step index.
template <class Observer>
void run_path(const model::HybridModel& model, const std::vector<int>& chain,
              const Eigen::VectorXd& x0, double dt, std::uint64_t master_seed, std::uint64_t path,
              bem::Stepper& stepper, Workspace& ws, Observer&& observe) {
  const auto steps = static_cast<std::int64_t>(chain.size()) - 1;
  const double root_dt = std::sqrt(dt);
  ws.x = x0;
  observe(std::int64_t{0}, ws.x, chain[0]);
  for (std::int64_t k = 0; k < steps; ++k) {
    rng::fill_normals(master_seed, rng::Stream::noise, path, static_cast<std::uint64_t>(k),
                      ws.db.data(), static_cast<int>(ws.db.size()));
    ws.db *= root_dt;
    model.diffusion_into(ws.x, chain[static_cast<std::size_t>(k)], ws.gmat);
    ws.v = ws.x;
    ws.v.noalias() += ws.gmat * ws.db;
    const int next_regime = chain[static_cast<std::size_t>(k) + 1];
    try {
      stepper.solve(ws.v, next_regime, ws.x);
    } catch (const Error& e) {
      rethrow_with_step(e, k);
    }
    observe(k + 1, ws.x, next_regime);
  }
}

int normalize_workers(int workers, std::int64_t blocks) {
  if (workers <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    workers = hw == 0 ? 1 : static_cast<int>(hw);
  }
  if (static_cast<std::int64_t>(workers) > blocks) workers = static_cast<int>(blocks);
  return workers < 1 ? 1 : workers;
}

/// Runs body(block_begin, block_end, worker_state) over path blocks claimed
/// from an atomic counter. make_state() runs once per thread.
template <class MakeState, class Body>
void parallel_blocks(std::int64_t paths, int workers, MakeState&& make_state, Body&& body) {
  const std::int64_t blocks = (paths + kBlockSize - 1) / kBlockSize;
  workers = normalize_workers(workers, blocks);
  std::atomic<std::int64_t> next{0};
  const auto worker = [&] {
    auto state = make_state();
    for (;;) {
      const std::int64_t b = next.fetch_add(1);
      if (b >= blocks) return;
      const std::int64_t begin = b * kBlockSize;
      const std::int64_t end = std::min(begin + kBlockSize, paths);
      body(b, begin, end, state);
    }
  };
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

struct FailureLog {
  std::vector<std::uint8_t> failed;
  std::vector<std::string> message;

  explicit FailureLog(std::int64_t paths)
      : failed(static_cast<std::size_t>(paths), 0), message(static_cast<std::size_t>(paths)) {}

  void record(std::int64_t path, const std::exception& e) {
    failed[static_cast<std::size_t>(path)] = 1;
    message[static_cast<std::size_t>(path)] = e.what();
  }

  [[nodiscard]] std::int64_t count() const {
    std::int64_t n = 0;
    for (const auto f : failed) n += f;
    return n;
  }

  /// Enforces the failure budget; returns the surviving-path count.
  std::int64_t enforce(std::int64_t paths) const {
    const std::int64_t failures = count();
    if (static_cast<double>(failures) > kFailureBudget * static_cast<double>(paths)) {
      std::int64_t first = -1;
      for (std::size_t i = 0; i < failed.size(); ++i) {
        if (failed[i] != 0) {
          first = static_cast<std::int64_t>(i);
          break;
        }
      }
      throw Error(Errc::ensemble_failure,
                  std::to_string(failures) + " of " + std::to_string(paths) +
                      " paths failed; first: path " + std::to_string(first) + ": " +
                      message[static_cast<std::size_t>(first)]);
    }
    return paths - failures;
  }
};

}  // namespace

std::int64_t grid_step(double t, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  const auto k = std::llround(t / dt);
  const double snapped = static_cast<double>(k) * dt;
  if (k < 0 || std::abs(t - snapped) > kGridTolerance * std::max(1.0, std::abs(t))) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "time %.12g is not a nonnegative multiple of dt = %.12g", t,
                  dt);
    throw Error(Errc::off_grid_time, buf);
  }
  return k;
}

Trajectory simulate(const model::HybridModel& model, const markov::Generator& generator,
                    const Eigen::VectorXd& x0, int i0, double dt, int steps,
                    const markov::SeedRecord& seed, const SimOptions& opts) {
  validate_run(model, generator, x0, i0, dt, steps, opts);
  const Eigen::MatrixXd tm = markov::transition_matrix(generator, dt);

  Trajectory out;
  out.chain = markov::sample_chain(tm, i0, steps, dt, seed);
  out.dt = dt;
  out.seed = seed;
  out.states.resize(steps + 1, model.state_dim());

  bem::Stepper stepper(model, dt, opts.solver);
  Workspace ws(model.state_dim(), model.noise_dim());
  run_path(model, out.chain.states, x0, dt, seed.master_seed, seed.path_index, stepper, ws,
           [&](std::int64_t k, const Eigen::VectorXd& x, int) { out.states.row(k) = x; });
  return out;
}

CoupledPair simulate_coupled(const model::HybridModel& model, const markov::Generator& generator,
                             const Eigen::VectorXd& x0, int i0, const Eigen::VectorXd& y0, int j0,
                             double dt, int steps, const markov::SeedRecord& seed,
                             const SimOptions& opts) {
  validate_run(model, generator, x0, i0, dt, steps, opts);
  if (y0.size() != model.state_dim())
    throw std::invalid_argument("initial state dimension does not match the model");
  if (j0 < 1 || j0 > model.regime_count())
    throw std::invalid_argument("initial regime out of range");
  const Eigen::MatrixXd tm = markov::transition_matrix(generator, dt);
  const auto chains = markov::couple_chains(tm, i0, j0, steps, dt, seed);

  CoupledPair out;
  out.meeting_step = chains.meeting_step;
  out.a.chain = chains.a;
  out.b.chain = chains.b;
  out.a.dt = out.b.dt = dt;
  out.a.seed = out.b.seed = seed;
  out.a.states.resize(steps + 1, model.state_dim());
  out.b.states.resize(steps + 1, model.state_dim());

  bem::Stepper stepper(model, dt, opts.solver);
  Workspace ws(model.state_dim(), model.noise_dim());
  run_path(model, out.a.chain.states, x0, dt, seed.master_seed, seed.path_index, stepper, ws,
           [&](std::int64_t k, const Eigen::VectorXd& x, int) { out.a.states.row(k) = x; });
  run_path(model, out.b.chain.states, y0, dt, seed.master_seed, seed.path_index, stepper, ws,
           [&](std::int64_t k, const Eigen::VectorXd& x, int) { out.b.states.row(k) = x; });
  return out;
}

std::vector<SnapshotEnsemble> ensemble_snapshots(const model::HybridModel& model,
                                                 const markov::Generator& generator,
                                                 const Eigen::VectorXd& x0, int i0, double dt,
                                                 const std::vector<double>& times,
                                                 std::int64_t paths, std::uint64_t master_seed,
                                                 int workers, const SimOptions& opts) {
  validate_run(model, generator, x0, i0, dt, 0, opts);
  if (paths < 1) throw std::invalid_argument("paths must be at least 1");
  if (times.empty()) throw std::invalid_argument("at least one snapshot time is required");

  std::vector<std::int64_t> snap_steps;
  snap_steps.reserve(times.size());
  std::int64_t steps = 0;
  for (const double t : times) {
    snap_steps.push_back(grid_step(t, dt));
    steps = std::max(steps, snap_steps.back());
  }
  std::unordered_map<std::int64_t, std::vector<std::size_t>> at_step;
  for (std::size_t s = 0; s < snap_steps.size(); ++s) at_step[snap_steps[s]].push_back(s);

  const Eigen::MatrixXd tm = markov::transition_matrix(generator, dt);
  const int n = model.state_dim();
  const std::size_t snaps = times.size();
  std::vector<double> atom_states(static_cast<std::size_t>(paths) * snaps *
                                  static_cast<std::size_t>(n));
  std::vector<int> atom_regimes(static_cast<std::size_t>(paths) * snaps, 0);
  FailureLog failures(paths);

  struct State {
    bem::Stepper stepper;
    Workspace ws;
  };
  parallel_blocks(
      paths, workers,
      [&] { return State{bem::Stepper(model, dt, opts.solver), Workspace(n, model.noise_dim())}; },
      [&](std::int64_t, std::int64_t begin, std::int64_t end, State& st) {
        for (std::int64_t p = begin; p < end; ++p) {
          const auto chain =
              markov::sample_chain(tm, i0, static_cast<int>(steps), dt,
                                   {master_seed, static_cast<std::uint64_t>(p)});
          try {
            run_path(model, chain.states, x0, dt, master_seed, static_cast<std::uint64_t>(p),
                     st.stepper, st.ws, [&](std::int64_t k, const Eigen::VectorXd& x, int regime) {
                       const auto hit = at_step.find(k);
                       if (hit == at_step.end()) return;
                       for (const std::size_t s : hit->second) {
                         const std::size_t base =
                             (static_cast<std::size_t>(p) * snaps + s) * static_cast<std::size_t>(n);
                         for (int d = 0; d < n; ++d) atom_states[base + d] = x(d);
                         atom_regimes[static_cast<std::size_t>(p) * snaps + s] = regime;
                       }
                     });
          } catch (const std::exception& e) {
            failures.record(p, e);
          }
        }
      });

  failures.enforce(paths);

  std::vector<SnapshotEnsemble> out(snaps);
  for (std::size_t s = 0; s < snaps; ++s) {
    auto& snap = out[s];
    snap.time = times[s];
    snap.step = snap_steps[s];
    snap.model_id = model.id();
    snap.dt = dt;
    snap.requested_paths = paths;
    snap.master_seed = master_seed;
    std::int64_t survivors = 0;
    for (std::int64_t p = 0; p < paths; ++p)
      survivors += failures.failed[static_cast<std::size_t>(p)] == 0 ? 1 : 0;
    snap.states.resize(survivors, n);
    snap.regimes.reserve(static_cast<std::size_t>(survivors));
    snap.path_ids.reserve(static_cast<std::size_t>(survivors));
    std::int64_t row = 0;
    for (std::int64_t p = 0; p < paths; ++p) {
      if (failures.failed[static_cast<std::size_t>(p)] != 0) continue;
      const std::size_t base =
          (static_cast<std::size_t>(p) * snaps + s) * static_cast<std::size_t>(n);
      for (int d = 0; d < n; ++d) snap.states(row, d) = atom_states[base + d];
      snap.regimes.push_back(atom_regimes[static_cast<std::size_t>(p) * snaps + s]);
      snap.path_ids.push_back(p);
      ++row;
    }
  }
  return out;
}

MomentSeries second_moment_series(const model::HybridModel& model,
                                  const markov::Generator& generator, const Eigen::VectorXd& x0,
                                  int i0, double dt, int steps, std::int64_t paths,
                                  std::uint64_t master_seed, int workers, const SimOptions& opts) {
  validate_run(model, generator, x0, i0, dt, steps, opts);
  if (paths < 1) throw std::invalid_argument("paths must be at least 1");

  const Eigen::MatrixXd tm = markov::transition_matrix(generator, dt);
  const std::int64_t blocks = (paths + kBlockSize - 1) / kBlockSize;
  const auto series_len = static_cast<std::size_t>(steps) + 1;
  std::vector<std::vector<double>> block_sum(static_cast<std::size_t>(blocks));
  std::vector<std::int64_t> block_ok(static_cast<std::size_t>(blocks), 0);
  FailureLog failures(paths);

  struct State {
    bem::Stepper stepper;
    Workspace ws;
    std::vector<double> path_sq;  // |X_k|^2 of the path in flight
  };
  parallel_blocks(
      paths, workers,
      [&] {
        return State{bem::Stepper(model, dt, opts.solver),
                     Workspace(model.state_dim(), model.noise_dim()),
                     std::vector<double>(series_len)};
      },
      [&](std::int64_t b, std::int64_t begin, std::int64_t end, State& st) {
        auto& sum = block_sum[static_cast<std::size_t>(b)];
        sum.assign(series_len, 0.0);
        for (std::int64_t p = begin; p < end; ++p) {
          const auto chain = markov::sample_chain(tm, i0, steps, dt,
                                                  {master_seed, static_cast<std::uint64_t>(p)});
          try {
            run_path(model, chain.states, x0, dt, master_seed, static_cast<std::uint64_t>(p),
                     st.stepper, st.ws, [&](std::int64_t k, const Eigen::VectorXd& x, int) {
                       st.path_sq[static_cast<std::size_t>(k)] = x.squaredNorm();
                     });
          } catch (const std::exception& e) {
            failures.record(p, e);
            continue;
          }
          for (std::size_t k = 0; k < series_len; ++k) sum[k] += st.path_sq[k];
          ++block_ok[static_cast<std::size_t>(b)];
        }
      });

  MomentSeries out;
  out.dt = dt;
  out.requested_paths = paths;
  out.surviving_paths = failures.enforce(paths);
  out.value.assign(series_len, 0.0);
  for (std::int64_t b = 0; b < blocks; ++b)
    for (std::size_t k = 0; k < series_len; ++k)
      out.value[k] += block_sum[static_cast<std::size_t>(b)][k];
  for (auto& v : out.value) v /= static_cast<double>(out.surviving_paths);
  return out;
}

DecaySeries coupled_decay_series(const model::HybridModel& model,
                                 const markov::Generator& generator, const Eigen::VectorXd& x0,
                                 int i0, const Eigen::VectorXd& y0, int j0, double p, double dt,
                                 int steps, std::int64_t paths, std::uint64_t master_seed,
                                 int workers, const SimOptions& opts) {
  validate_run(model, generator, x0, i0, dt, steps, opts);
  if (y0.size() != model.state_dim())
    throw std::invalid_argument("initial state dimension does not match the model");
  if (j0 < 1 || j0 > model.regime_count())
    throw std::invalid_argument("initial regime out of range");
  if (paths < 1) throw std::invalid_argument("paths must be at least 1");
  if (!(p > 0.0)) throw Error(Errc::invalid_p, "exponent p must be positive");

  const Eigen::MatrixXd tm = markov::transition_matrix(generator, dt);
  const std::int64_t blocks = (paths + kBlockSize - 1) / kBlockSize;
  const auto series_len = static_cast<std::size_t>(steps) + 1;
  std::vector<std::vector<double>> block_sum(static_cast<std::size_t>(blocks));
  std::vector<std::int64_t> block_ok(static_cast<std::size_t>(blocks), 0);
  std::vector<std::int64_t> block_met(static_cast<std::size_t>(blocks), 0);
  FailureLog failures(paths);

  struct State {
    bem::Stepper stepper;
    Workspace ws;
    Eigen::MatrixXd a_states;     // path a, (steps + 1) x n
    std::vector<double> path_dp;  // |D_k|^p of the pair in flight
  };
  parallel_blocks(
      paths, workers,
      [&] {
        return State{bem::Stepper(model, dt, opts.solver),
                     Workspace(model.state_dim(), model.noise_dim()),
                     Eigen::MatrixXd(steps + 1, model.state_dim()),
                     std::vector<double>(series_len)};
      },
      [&](std::int64_t b, std::int64_t begin, std::int64_t end, State& st) {
        auto& sum = block_sum[static_cast<std::size_t>(b)];
        sum.assign(series_len, 0.0);
        for (std::int64_t pi = begin; pi < end; ++pi) {
          const markov::SeedRecord seed{master_seed, static_cast<std::uint64_t>(pi)};
          const auto chains = markov::couple_chains(tm, i0, j0, steps, dt, seed);
          try {
            run_path(model, chains.a.states, x0, dt, master_seed, seed.path_index, st.stepper,
                     st.ws, [&](std::int64_t k, const Eigen::VectorXd& x, int) {
                       st.a_states.row(k) = x;
                     });
            run_path(model, chains.b.states, y0, dt, master_seed, seed.path_index, st.stepper,
                     st.ws, [&](std::int64_t k, const Eigen::VectorXd& x, int) {
                       const double dist = (x - st.a_states.row(k).transpose()).norm();
                       st.path_dp[static_cast<std::size_t>(k)] = std::pow(dist, p);
                     });
          } catch (const std::exception& e) {
            failures.record(pi, e);
            continue;
          }
          for (std::size_t k = 0; k < series_len; ++k) sum[k] += st.path_dp[k];
          ++block_ok[static_cast<std::size_t>(b)];
          if (chains.meeting_step.has_value()) ++block_met[static_cast<std::size_t>(b)];
        }
      });

  DecaySeries out;
  out.dt = dt;
  out.p = p;
  out.requested_paths = paths;
  out.surviving_paths = failures.enforce(paths);
  out.value.assign(series_len, 0.0);
  for (std::int64_t b = 0; b < blocks; ++b) {
    for (std::size_t k = 0; k < series_len; ++k)
      out.value[k] += block_sum[static_cast<std::size_t>(b)][k];
    out.met_by_end += block_met[static_cast<std::size_t>(b)];
  }
  for (auto& v : out.value) v /= static_cast<double>(out.surviving_paths);
  return out;
}

}  // namespace hybem::sim
