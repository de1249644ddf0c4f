#include "css/error.hpp"

namespace css {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::unbounded: return "unbounded";
    case ErrorCode::empty: return "empty";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::negative_distance: return "negative_distance";
    case ErrorCode::no_relative_degree: return "no_relative_degree";
    case ErrorCode::mixed_relative_degree: return "mixed_relative_degree";
    case ErrorCode::non_psd: return "non_psd";
    case ErrorCode::cholesky_failure: return "cholesky_failure";
    case ErrorCode::missing_p: return "missing_p";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::infeasible: return "infeasible";
    case ErrorCode::numerical_failure: return "numerical_failure";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::missing_data: return "missing_data";
    case ErrorCode::schema: return "schema";
    case ErrorCode::invalid_argument: return "invalid_argument";
  }
  return "unknown";
}

}  // namespace css
