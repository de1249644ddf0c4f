#pragma once

#include <stdexcept>
#include <string>

namespace css {

enum class ErrorCode {
  unbounded,            // polytope has a recession direction
  empty,                // inequality system is infeasible
  degenerate,           // zero-volume or otherwise unusable geometry
  negative_distance,    // point outside the cell where inside was required
  no_relative_degree,   // row * A^i * B vanishes for every i < n_x
  mixed_relative_degree,// barrier faces disagree on r
  non_psd,              // covariance quadratic form came out negative
  cholesky_failure,     // covariance has eigenvalues below tolerance
  missing_p,            // equilibrium task without a Lyapunov matrix
  dimension_mismatch,   // scenario/controller shapes disagree
  infeasible,           // LMI / phase-I proved there is no solution
  numerical_failure,    // Newton system unrecoverable
  non_finite,           // simulation state diverged
  missing_data,         // expected artifact files absent
  schema,               // scenario/controller JSON rejected
  invalid_argument,     // bad parameter value
};

const char* to_string(ErrorCode code);

/// Exception carrying a machine-checkable code next to the human message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace css
