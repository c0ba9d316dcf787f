#include "hybem/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>
#include <utility>

#include "hybem/csv.hpp"
#include "hybem/errors.hpp"

namespace hybem::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& field, const std::string& what) {
  throw Error(Errc::config_parse, field + ": " + what);
}

const json* find(const json& j, const std::string& key) {
  if (!j.is_object()) return nullptr;
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

const json& need(const json& j, const std::string& path, const std::string& key) {
  const json* p = find(j, key);
  if (p == nullptr) fail(path.empty() ? key : path + "." + key, "missing required field");
  return *p;
}

double as_double(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

std::int64_t as_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

std::uint64_t as_uint(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected a nonnegative integer");
  if (!j.is_number_unsigned() && j.get<std::int64_t>() < 0)
    fail(path, "expected a nonnegative integer");
  return j.get<std::uint64_t>();
}

bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

std::vector<double> as_double_list(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i)
    out.push_back(as_double(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Eigen::VectorXd as_vector(const json& j, const std::string& path) {
  const auto v = as_double_list(j, path);
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

Eigen::MatrixXd as_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) fail(path, "expected a nonempty array of rows");
  const auto rows = j.size();
  std::size_t cols = 0;
  Eigen::MatrixXd out;
  for (std::size_t r = 0; r < rows; ++r) {
    const auto row = as_double_list(j[r], path + "[" + std::to_string(r) + "]");
    if (r == 0) {
      cols = row.size();
      if (cols == 0) fail(path + "[0]", "rows must be nonempty");
      out.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    } else if (row.size() != cols) {
      fail(path + "[" + std::to_string(r) + "]",
           "expected " + std::to_string(cols) + " entries, got " + std::to_string(row.size()));
    }
    for (std::size_t c = 0; c < cols; ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = row[c];
  }
  return out;
}

model::Polynomial parse_polynomial(const json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of terms");
  model::Polynomial poly;
  for (std::size_t t = 0; t < j.size(); ++t) {
    const std::string tp = path + "[" + std::to_string(t) + "]";
    const json& term = j[t];
    if (!term.is_object()) fail(tp, "expected an object with coefficient and exponents");
    model::PolynomialTerm out;
    out.coefficient = as_double(need(term, tp, "coefficient"), tp + ".coefficient");
    const json& exps = need(term, tp, "exponents");
    if (!exps.is_array()) fail(tp + ".exponents", "expected an array of integers");
    for (std::size_t e = 0; e < exps.size(); ++e) {
      const auto v = as_int(exps[e], tp + ".exponents[" + std::to_string(e) + "]");
      if (v < 0) fail(tp + ".exponents[" + std::to_string(e) + "]", "exponents must be >= 0");
      out.exponents.push_back(static_cast<int>(v));
    }
    poly.push_back(std::move(out));
  }
  return poly;
}

model::PolynomialModel parse_polynomial_model(const json& j, const std::string& path) {
  model::PolynomialModel m;
  m.id = as_string(need(j, path, "id"), path + ".id");
  m.state_dim = static_cast<int>(as_int(need(j, path, "state_dim"), path + ".state_dim"));
  m.noise_dim = static_cast<int>(as_int(need(j, path, "noise_dim"), path + ".noise_dim"));
  m.regime_count =
      static_cast<int>(as_int(need(j, path, "regime_count"), path + ".regime_count"));

  const json& drift = need(j, path, "drift");
  if (!drift.is_array()) fail(path + ".drift", "expected an array indexed by regime");
  for (std::size_t r = 0; r < drift.size(); ++r) {
    const std::string rp = path + ".drift[" + std::to_string(r) + "]";
    if (!drift[r].is_array()) fail(rp, "expected an array indexed by component");
    std::vector<model::Polynomial> comps;
    for (std::size_t c = 0; c < drift[r].size(); ++c)
      comps.push_back(parse_polynomial(drift[r][c], rp + "[" + std::to_string(c) + "]"));
    m.drift.push_back(std::move(comps));
  }

  const json& diff = need(j, path, "diffusion");
  if (!diff.is_array()) fail(path + ".diffusion", "expected an array indexed by regime");
  for (std::size_t r = 0; r < diff.size(); ++r) {
    const std::string rp = path + ".diffusion[" + std::to_string(r) + "]";
    if (!diff[r].is_array()) fail(rp, "expected an array indexed by row");
    std::vector<std::vector<model::Polynomial>> rows;
    for (std::size_t a = 0; a < diff[r].size(); ++a) {
      const std::string ap = rp + "[" + std::to_string(a) + "]";
      if (!diff[r][a].is_array()) fail(ap, "expected an array indexed by column");
      std::vector<model::Polynomial> cols;
      for (std::size_t b = 0; b < diff[r][a].size(); ++b)
        cols.push_back(parse_polynomial(diff[r][a][b], ap + "[" + std::to_string(b) + "]"));
      rows.push_back(std::move(cols));
    }
    m.diffusion.push_back(std::move(rows));
  }
  return m;
}

}  // namespace

ExperimentConfig parse_config(const json& doc, const Overrides& overrides) {
  if (!doc.is_object()) fail("config", "top level must be an object");

  json effective = doc;
  if (overrides.seed) effective["seed"] = *overrides.seed;
  if (overrides.workers) effective["workers"] = *overrides.workers;
  if (overrides.out) effective["output_dir"] = *overrides.out;
  if (overrides.tol) effective["solver"]["tol"] = *overrides.tol;
  if (overrides.max_newton_iters) effective["solver"]["max_newton_iters"] = *overrides.max_newton_iters;
  if (overrides.allow_unstable_step) effective["allow_unstable_step"] = true;

  static const std::set<std::string> known{
      "model",          "constants",  "generator",   "initial_conditions",
      "dt",             "steps",      "ensemble",    "snapshot_times",
      "p",              "seed",       "output_dir",  "workers",
      "allow_unstable_step",          "burn_in",     "solver",
      "sampling",       "wasserstein", "ks",         "density",
      "order_fit"};
  for (const auto& item : effective.items()) {
    if (known.find(item.key()) == known.end()) fail(item.key(), "unknown field");
  }

  ExperimentConfig cfg;
  cfg.effective = effective;

  const json& model_block = need(effective, "", "model");
  const json* builtin = find(model_block, "builtin");
  const json* poly = find(model_block, "polynomial");
  if ((builtin != nullptr) == (poly != nullptr))
    fail("model", "exactly one of builtin or polynomial is required");
  if (builtin != nullptr) cfg.builtin = as_string(*builtin, "model.builtin");
  if (poly != nullptr) cfg.polynomial = parse_polynomial_model(*poly, "model.polynomial");

  if (const json* c = find(effective, "constants")) {
    ConstantsConfig k;
    k.q = as_double(need(*c, "constants", "q"), "constants.q");
    k.a = as_double_list(need(*c, "constants", "a"), "constants.a");
    k.l1 = as_double(need(*c, "constants", "l1"), "constants.l1");
    k.n = as_double_list(need(*c, "constants", "n"), "constants.n");
    cfg.constants = std::move(k);
  }

  cfg.generator = as_matrix(need(effective, "", "generator"), "generator");
  if (cfg.generator.rows() != cfg.generator.cols())
    fail("generator", "matrix must be square");

  const json& ics = need(effective, "", "initial_conditions");
  if (!ics.is_array() || ics.empty())
    fail("initial_conditions", "expected a nonempty array");
  for (std::size_t i = 0; i < ics.size(); ++i) {
    const std::string ip = "initial_conditions[" + std::to_string(i) + "]";
    InitialCondition ic;
    ic.x = as_vector(need(ics[i], ip, "x"), ip + ".x");
    if (ic.x.size() == 0) fail(ip + ".x", "state vector must be nonempty");
    ic.regime = static_cast<int>(as_int(need(ics[i], ip, "regime"), ip + ".regime"));
    cfg.initial_conditions.push_back(std::move(ic));
  }

  cfg.dt = as_double(need(effective, "", "dt"), "dt");
  if (!(cfg.dt > 0.0)) fail("dt", "must be positive");
  cfg.steps = as_int(need(effective, "", "steps"), "steps");
  if (cfg.steps < 0) fail("steps", "must be >= 0");
  cfg.ensemble = as_int(need(effective, "", "ensemble"), "ensemble");
  if (cfg.ensemble < 1) fail("ensemble", "must be >= 1");
  cfg.seed = as_uint(need(effective, "", "seed"), "seed");

  if (const json* t = find(effective, "snapshot_times"))
    cfg.snapshot_times = as_double_list(*t, "snapshot_times");
  if (const json* p = find(effective, "p")) {
    cfg.p = as_double(*p, "p");
    if (!(cfg.p > 0.0 && cfg.p < 1.0)) fail("p", "must lie strictly between 0 and 1");
  }
  if (const json* o = find(effective, "output_dir")) cfg.output_dir = as_string(*o, "output_dir");
  if (const json* w = find(effective, "workers")) {
    cfg.workers = static_cast<int>(as_int(*w, "workers"));
    if (cfg.workers < 0) fail("workers", "must be >= 0");
  }
  if (const json* a = find(effective, "allow_unstable_step"))
    cfg.allow_unstable_step = as_bool(*a, "allow_unstable_step");
  if (const json* b = find(effective, "burn_in")) {
    cfg.burn_in = as_double(*b, "burn_in");
    if (!(cfg.burn_in >= 0.0 && cfg.burn_in < 1.0)) fail("burn_in", "must lie in [0, 1)");
  }

  if (const json* s = find(effective, "solver")) {
    if (const json* v = find(*s, "tol")) cfg.solver.tol = as_double(*v, "solver.tol");
    if (const json* v = find(*s, "max_newton_iters"))
      cfg.solver.max_newton_iters = static_cast<int>(as_int(*v, "solver.max_newton_iters"));
    if (const json* v = find(*s, "max_bisection_iters"))
      cfg.solver.max_bisection_iters = static_cast<int>(as_int(*v, "solver.max_bisection_iters"));
    if (const json* v = find(*s, "analytic_jacobian"))
      cfg.solver.analytic_jacobian = as_bool(*v, "solver.analytic_jacobian");
    try {
      cfg.solver.validate();
    } catch (const std::exception& e) {
      fail("solver", e.what());
    }
  }

  if (const json* s = find(effective, "sampling")) {
    if (const json* v = find(*s, "lo")) cfg.sampling.lo = as_vector(*v, "sampling.lo");
    if (const json* v = find(*s, "hi")) cfg.sampling.hi = as_vector(*v, "sampling.hi");
    if ((cfg.sampling.lo.size() == 0) != (cfg.sampling.hi.size() == 0))
      fail("sampling", "lo and hi must be given together");
    if (const json* v = find(*s, "samples")) {
      cfg.sampling.samples = as_int(*v, "sampling.samples");
      if (cfg.sampling.samples < 2) fail("sampling.samples", "must be >= 2");
    }
    if (const json* v = find(*s, "seed")) cfg.sampling.seed = as_uint(*v, "sampling.seed");
  }

  if (const json* s = find(effective, "wasserstein")) {
    if (const json* v = find(*s, "assignment_cap"))
      cfg.wasserstein.assignment_cap = static_cast<int>(as_int(*v, "wasserstein.assignment_cap"));
    if (const json* v = find(*s, "transport_cap"))
      cfg.wasserstein.transport_cap = static_cast<int>(as_int(*v, "wasserstein.transport_cap"));
    if (const json* v = find(*s, "subsample")) {
      cfg.wasserstein.subsample = static_cast<int>(as_int(*v, "wasserstein.subsample"));
      if (cfg.wasserstein.subsample < 1 || cfg.wasserstein.subsample > 2048)
        fail("wasserstein.subsample", "must lie in [1, 2048]");
    }
    if (const json* v = find(*s, "resamples")) {
      cfg.wasserstein.resamples = static_cast<int>(as_int(*v, "wasserstein.resamples"));
      if (cfg.wasserstein.resamples < 1) fail("wasserstein.resamples", "must be >= 1");
    }
    if (const json* v = find(*s, "dump_plans"))
      cfg.wasserstein.dump_plans = as_bool(*v, "wasserstein.dump_plans");
  }

  if (const json* s = find(effective, "ks")) {
    if (const json* v = find(*s, "grid_step")) {
      cfg.ks.grid_step = as_double(*v, "ks.grid_step");
      if (!(cfg.ks.grid_step > 0.0)) fail("ks.grid_step", "must be positive");
    }
    if (const json* v = find(*s, "grid_points")) {
      cfg.ks.grid_points = static_cast<int>(as_int(*v, "ks.grid_points"));
      if (cfg.ks.grid_points < 2) fail("ks.grid_points", "must be >= 2");
    }
  }

  if (const json* s = find(effective, "density")) {
    if (const json* v = find(*s, "kind")) {
      cfg.density.kind = as_string(*v, "density.kind");
      if (cfg.density.kind != "histogram" && cfg.density.kind != "kde")
        fail("density.kind", "expected histogram or kde");
    }
    if (const json* v = find(*s, "bins")) {
      cfg.density.bins = static_cast<int>(as_int(*v, "density.bins"));
      if (cfg.density.bins < 0) fail("density.bins", "must be >= 0");
    }
    if (const json* v = find(*s, "bandwidth")) {
      cfg.density.bandwidth = as_double(*v, "density.bandwidth");
      if (cfg.density.bandwidth < 0.0) fail("density.bandwidth", "must be >= 0");
    }
    if (const json* v = find(*s, "grid_cells")) {
      cfg.density.grid_cells = static_cast<int>(as_int(*v, "density.grid_cells"));
      if (cfg.density.grid_cells < 1) fail("density.grid_cells", "must be >= 1");
    }
  }

  if (const json* s = find(effective, "order_fit")) {
    cfg.order_fit.present = true;
    cfg.order_fit.dt_list = as_double_list(need(*s, "order_fit", "dt_list"), "order_fit.dt_list");
    if (cfg.order_fit.dt_list.size() < 3)
      fail("order_fit.dt_list", "need at least 3 step sizes");
    std::set<double> distinct;
    for (const double d : cfg.order_fit.dt_list) {
      if (!(d > 0.0)) fail("order_fit.dt_list", "step sizes must be positive");
      distinct.insert(d);
    }
    if (distinct.size() != cfg.order_fit.dt_list.size())
      fail("order_fit.dt_list", "step sizes must be distinct; a log-log fit over repeated "
                                "values is degenerate");
    cfg.order_fit.dt_ref = as_double(need(*s, "order_fit", "dt_ref"), "order_fit.dt_ref");
    const double dt_min = *distinct.begin();
    if (!(cfg.order_fit.dt_ref > 0.0) || cfg.order_fit.dt_ref > dt_min / 4.0)
      fail("order_fit.dt_ref", "reference step must be positive and at most min(dt_list)/4");
    if (const json* v = find(*s, "horizon")) {
      cfg.order_fit.horizon = as_double(*v, "order_fit.horizon");
      if (!(cfg.order_fit.horizon > 0.0)) fail("order_fit.horizon", "must be positive");
    }
  }

  // The hash identifies the experiment, not its execution placement: the
  // worker count must never change output bytes and the output directory only
  // says where they land, so neither participates.
  json hashable = effective;
  hashable.erase("workers");
  hashable.erase("output_dir");
  cfg.hash = io::fnv1a64(hashable.dump());
  cfg.hash_hex = io::hex64(cfg.hash);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const Overrides& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::config_parse, "cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::config_parse, path + ": " + e.what());
  }
  return parse_config(doc, overrides);
}

Runtime build_runtime(const ExperimentConfig& config) {
  try {
    auto m = config.polynomial ? model::make_polynomial_model(*config.polynomial)
                               : model::builtin_model(config.builtin);
    const int regimes = m.regime_count();

    if (config.generator.rows() != regimes)
      fail("generator", "model has " + std::to_string(regimes) + " regimes but the generator is " +
                            std::to_string(config.generator.rows()) + "x" +
                            std::to_string(config.generator.cols()));
    markov::Generator gen(config.generator);

    if (config.constants) {
      const auto& k = *config.constants;
      if (static_cast<int>(k.a.size()) != regimes)
        fail("constants.a", "expected one entry per regime");
      if (static_cast<int>(k.n.size()) != regimes)
        fail("constants.n", "expected one entry per regime");
      m.declare_constants(model::derive_constants(m, k.q, k.a, k.l1, k.n));
    }

    for (std::size_t i = 0; i < config.initial_conditions.size(); ++i) {
      const auto& ic = config.initial_conditions[i];
      const std::string ip = "initial_conditions[" + std::to_string(i) + "]";
      if (ic.x.size() != m.state_dim())
        fail(ip + ".x", "expected " + std::to_string(m.state_dim()) + " components");
      if (ic.regime < 1 || ic.regime > regimes)
        fail(ip + ".regime", "must lie in [1, " + std::to_string(regimes) + "]");
    }

    model::SamplingBox box;
    if (config.sampling.lo.size() > 0) {
      if (config.sampling.lo.size() != m.state_dim() ||
          config.sampling.hi.size() != m.state_dim())
        fail("sampling", "lo and hi must have one entry per state dimension");
      box.lo = config.sampling.lo;
      box.hi = config.sampling.hi;
    } else {
      box.lo = Eigen::VectorXd::Constant(m.state_dim(), -10.0);
      box.hi = Eigen::VectorXd::Constant(m.state_dim(), 10.0);
    }
    box.validate();

    return Runtime{std::move(m), std::move(gen), std::move(box)};
  } catch (const Error& e) {
    if (e.code() == Errc::config_parse) throw;
    throw Error(Errc::config_parse, e.what());
  } catch (const std::invalid_argument& e) {
    throw Error(Errc::config_parse, e.what());
  }
}

}  // namespace hybem::cli
