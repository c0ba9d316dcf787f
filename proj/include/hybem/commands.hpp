#pragma once

#include <ostream>

#include "hybem/config.hpp"
#include "hybem/errors.hpp"

namespace hybem::cli {

/// Each command reads the config, writes its artifacts under
/// config.output_dir, logs a short deterministic summary, and returns the
/// process exit code (0 success, 3 assumption failure from check).
int cmd_check(const ExperimentConfig& config, std::ostream& log);
int cmd_simulate(const ExperimentConfig& config, std::ostream& log);
int cmd_invariant(const ExperimentConfig& config, std::ostream& log);
int cmd_initial_independence(const ExperimentConfig& config, std::ostream& log);
int cmd_coupling_decay(const ExperimentConfig& config, std::ostream& log);
int cmd_wasserstein_order(const ExperimentConfig& config, std::ostream& log);

/// Exit code for a thrown error: 2 for configuration mistakes, 4 for
/// numerical failures.
int exit_code_for(Errc code) noexcept;

/// Full argv entry point: subcommand dispatch, flag overrides, error mapping.
int run_cli(int argc, char** argv);

}  // namespace hybem::cli
