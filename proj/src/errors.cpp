#include "hybem/errors.hpp"

namespace hybem {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::negative_off_diagonal: return "NegativeOffDiagonal";
    case Errc::row_sum_nonzero: return "RowSumNonzero";
    case Errc::reducible: return "Reducible";
    case Errc::singular_system: return "SingularSystem";
    case Errc::degenerate_box: return "DegenerateBox";
    case Errc::invalid_p: return "InvalidP";
    case Errc::size_cap_exceeded: return "SizeCapExceeded";
    case Errc::empty_sample: return "EmptySample";
    case Errc::non_positive_values: return "NonPositiveValues";
    case Errc::too_few_points: return "TooFewPoints";
    case Errc::no_convergence: return "NoConvergence";
    case Errc::singular_jacobian: return "SingularJacobian";
    case Errc::non_finite_evaluation: return "NonFiniteEvaluation";
    case Errc::off_grid_time: return "OffGridTime";
    case Errc::unstable_step: return "UnstableStep";
    case Errc::ensemble_failure: return "EnsembleFailure";
    case Errc::config_parse: return "ConfigParse";
    case Errc::io_error: return "IoError";
  }
  return "UnknownError";
}

}  // namespace hybem
