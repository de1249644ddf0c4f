#include "css/systems.hpp"

#include <cmath>

#include "css/error.hpp"

namespace css::systems {

namespace {

void check_dims(const LinearSystem& sys) {
  if (sys.a.rows() != sys.a.cols() || sys.b.rows() != sys.a.rows() || sys.b.cols() < 1) {
    throw Error(ErrorCode::dimension_mismatch, "inconsistent system matrices");
  }
}

LieCoefficients expand(const LinearSystem& sys, const Eigen::RowVectorXd& row,
                       const Eigen::VectorXd& coeffs, int r) {
  check_dims(sys);
  if (row.size() != sys.nx()) {
    throw Error(ErrorCode::dimension_mismatch, "row dimension does not match system");
  }
  if (coeffs.size() != r) {
    throw Error(ErrorCode::dimension_mismatch, "coefficient vector must have length r");
  }

  LieCoefficients out;
  Eigen::RowVectorXd row_am = row;  // row * A^m, starting at m = 0
  out.drift = coeffs[0] * row_am;
  for (int m = 1; m < r; ++m) {
    row_am = row_am * sys.a;
    out.drift += coeffs[m] * row_am;
  }
  out.input = row_am * sys.b;  // row * A^{r-1} * B
  out.drift += row_am * sys.a; // row * A^r
  return out;
}

}  // namespace

int relative_degree(const LinearSystem& sys, const Eigen::RowVectorXd& row) {
  check_dims(sys);
  if (row.size() != sys.nx()) {
    throw Error(ErrorCode::dimension_mismatch, "row dimension does not match system");
  }
  const double row_norm = row.norm();
  if (row_norm < 1e-12) {
    throw Error(ErrorCode::invalid_argument, "zero row");
  }
  Eigen::RowVectorXd row_am = row;
  for (int r = 1; r <= sys.nx(); ++r) {
    if ((row_am * sys.b).lpNorm<Eigen::Infinity>() > 1e-12 * row_norm) return r;
    row_am = row_am * sys.a;
  }
  throw Error(ErrorCode::no_relative_degree, "input never appears in the derivative chain");
}

LieCoefficients cbf_coefficients(const LinearSystem& sys, const BarrierFace& face, int r) {
  if ((face.alpha.array() <= 0.0).any()) {
    throw Error(ErrorCode::invalid_argument, "alpha entries must be positive");
  }
  return expand(sys, face.row, face.alpha, r);
}

LieCoefficients clf_path_coefficients(const LinearSystem& sys, const ExitFace& exit, int r) {
  return expand(sys, exit.normal, exit.beta, r);
}

LinearSystem double_integrator_2d() {
  LinearSystem sys;
  sys.a = Eigen::MatrixXd::Zero(4, 4);
  sys.a(0, 1) = 1.0;
  sys.a(2, 3) = 1.0;
  sys.b = Eigen::MatrixXd::Zero(4, 2);
  sys.b(1, 0) = 1.0;
  sys.b(3, 1) = 1.0;
  return sys;
}

LiftedCell lift_position_constraints(const geometry::Polytope& polygon, double vbound) {
  if (polygon.dim() != 2) {
    throw Error(ErrorCode::dimension_mismatch, "position polygon must be 2-D");
  }
  if (!(vbound > 0.0)) {
    throw Error(ErrorCode::degenerate, "velocity bound must be positive");
  }

  const Eigen::Index n_pos = polygon.num_faces();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n_pos + 4, 4);
  Eigen::VectorXd b(n_pos + 4);
  for (Eigen::Index i = 0; i < n_pos; ++i) {
    a(i, 0) = polygon.face_normals()(i, 0);
    a(i, 2) = polygon.face_normals()(i, 1);
    b[i] = polygon.face_offsets()[i];
  }
  const double sign[4] = {1.0, -1.0, 1.0, -1.0};
  const Eigen::Index coord[4] = {1, 1, 3, 3};
  for (Eigen::Index j = 0; j < 4; ++j) {
    a(n_pos + j, coord[j]) = sign[j];
    b[n_pos + j] = vbound;
  }

  LiftedCell lifted;
  lifted.cell = geometry::Polytope::from_halfspaces(a, b);
  for (Eigen::Index i = 0; i < lifted.cell.num_faces(); ++i) {
    if (lifted.cell.original_face_indices()[i] < n_pos) {
      lifted.position_faces.push_back(i);
    } else {
      lifted.velocity_faces.push_back(i);
    }
  }
  return lifted;
}

}  // namespace css::systems
