#pragma once

#include <Eigen/Dense>

namespace css {

/// Symmetric square root of a PSD matrix via eigendecomposition. Eigenvalues
/// in [-1e-10, 0) are clipped to zero; anything lower throws cholesky_failure.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m);

/// Largest eigenvalue of a symmetric matrix (the symmetric part is taken).
double max_eigenvalue(const Eigen::MatrixXd& m);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Eigen::MatrixXd& m);

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) {
  return 0.5 * (m + m.transpose());
}

bool all_finite(const Eigen::VectorXd& v);

}  // namespace css
