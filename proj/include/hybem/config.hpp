#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybem/bem.hpp"
#include "hybem/markov.hpp"
#include "hybem/model.hpp"

namespace hybem::cli {

struct InitialCondition {
  Eigen::VectorXd x;
  int regime = 1;
};

/// Constants block as written in the config; b, l2, n_M and m derive from it.
struct ConstantsConfig {
  double q = 2.0;
  std::vector<double> a;
  double l1 = 5.0;
  std::vector<double> n;
};

struct SamplingConfig {
  Eigen::VectorXd lo;  // empty means [-10, 10]^state_dim
  Eigen::VectorXd hi;
  std::int64_t samples = 20000;
  std::uint64_t seed = 7;
};

struct WassersteinConfig {
  int assignment_cap = 4096;
  int transport_cap = 512;
  int subsample = 1024;
  int resamples = 8;
  bool dump_plans = false;
};

struct KsConfig {
  double grid_step = 0.2;
  int grid_points = 201;
};

struct DensityConfig {
  std::string kind = "histogram";  // or "kde"
  int bins = 0;                    // 0 = automatic
  double bandwidth = 0.0;          // 0 = automatic (kde)
  int grid_cells = 400;            // kde table resolution
};

struct OrderFitConfig {
  bool present = false;
  std::vector<double> dt_list;
  double dt_ref = 0.0;
  double horizon = 40.0;
};

struct ExperimentConfig {
  std::string builtin;  // nonempty when the model block names a built-in
  std::optional<model::PolynomialModel> polynomial;
  std::optional<ConstantsConfig> constants;
  Eigen::MatrixXd generator;
  std::vector<InitialCondition> initial_conditions;
  double dt = 0.0;
  std::int64_t steps = 0;
  std::int64_t ensemble = 1;
  std::vector<double> snapshot_times;
  double p = 0.5;
  std::uint64_t seed = 0;
  std::string output_dir = "out";
  int workers = 1;
  bool allow_unstable_step = false;
  double burn_in = 0.2;
  bem::SolverOptions solver;
  SamplingConfig sampling;
  WassersteinConfig wasserstein;
  KsConfig ks;
  DensityConfig density;
  OrderFitConfig order_fit;

  nlohmann::json effective;  // parsed config with flag overrides applied
  std::uint64_t hash = 0;
  std::string hash_hex;
};

/// Command-line overrides; each maps one-for-one onto a config field.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> out;
  std::optional<double> tol;
  std::optional<int> max_newton_iters;
  bool allow_unstable_step = false;  // flag can only turn the guard off
};

/// Parses and validates a config file, then applies overrides and hashes the
/// effective document. All failures are ConfigParse errors naming the field.
ExperimentConfig load_config(const std::string& path, const Overrides& overrides = {});

/// Same, from an already-parsed document (used by tests).
ExperimentConfig parse_config(const nlohmann::json& doc, const Overrides& overrides = {});

/// Built objects for one run. Construction validates cross-field constraints
/// (dimensions, generator structure, constants) as ConfigParse errors.
struct Runtime {
  model::HybridModel model;
  markov::Generator generator;
  model::SamplingBox box;  // sampling block, or the default box
};

Runtime build_runtime(const ExperimentConfig& config);

}  // namespace hybem::cli
