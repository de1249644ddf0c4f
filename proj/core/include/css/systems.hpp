#pragma once

#include <Eigen/Dense>
#include <vector>

#include "css/geometry.hpp"

namespace css::systems {

/// Continuous LTI dynamics xdot = A x + B u.
struct LinearSystem {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;

  Eigen::Index nx() const { return a.rows(); }
  Eigen::Index nu() const { return b.cols(); }
};

/// One affine barrier h(x) = row * x + offset >= 0 with its exponential-CBF
/// coefficient vector alpha = (alpha_0, ..., alpha_{r-1}), all entries
/// positive.
struct BarrierFace {
  Eigen::RowVectorXd row;
  double offset = 0.0;
  Eigen::VectorXd alpha;
};

/// Exit-face Lyapunov function V(x) = normal * x + offset, zero on the exit
/// face and positive inside the cell, with coefficient vector beta.
struct ExitFace {
  Eigen::RowVectorXd normal;
  double offset = 0.0;
  Eigen::VectorXd beta;
};

/// Closed-form pieces of the r-th barrier derivative along the dynamics:
/// drift * x is the state part, input * u the control part.
struct LieCoefficients {
  Eigen::RowVectorXd drift;  // row*A^r + sum_m alpha_m row*A^m
  Eigen::RowVectorXd input;  // row*A^{r-1}*B
};

/// Smallest r >= 1 with row*A^{r-1}*B != 0 (tolerance 1e-12, scaled by the
/// row norm). Throws no_relative_degree when the input never shows up within
/// n_x derivatives.
int relative_degree(const LinearSystem& sys, const Eigen::RowVectorXd& row);

/// Coefficients of the exponential-CBF inequality for `face` at relative
/// degree r: drift = row*A^r + sum_{m=0}^{r-1} alpha_m row*A^m and
/// input = row*A^{r-1}*B. The constant term alpha_0 * offset is left to the
/// constraint compiler.
LieCoefficients cbf_coefficients(const LinearSystem& sys, const BarrierFace& face, int r);

/// Same expansion for the exit-face Lyapunov function (beta in place of
/// alpha).
LieCoefficients clf_path_coefficients(const LinearSystem& sys, const ExitFace& exit, int r);

/// Planar double integrator with state [x, xdot, y, ydot] and acceleration
/// inputs.
LinearSystem double_integrator_2d();

/// A 4-state cell: position polygon faces zero-padded into the state space,
/// crossed with the velocity box [-vbound, vbound]^2. Position faces are the
/// barrier family; velocity faces close the polytope for vertex enumeration
/// but carry no barrier by default.
struct LiftedCell {
  geometry::Polytope cell;
  std::vector<Eigen::Index> position_faces;  // indices into cell faces
  std::vector<Eigen::Index> velocity_faces;
};

LiftedCell lift_position_constraints(const geometry::Polytope& polygon, double vbound);

}  // namespace css::systems
