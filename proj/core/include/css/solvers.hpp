#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "css/compiler.hpp"
#include "css/systems.hpp"

namespace css::solvers {

struct SolverConfig {
  double barrier_mu0 = 1.0;
  double barrier_factor = 10.0;
  int max_newton_iters = 80;
  int max_outer_iters = 40;
  double tol_kkt = 1e-7;     // scaled stationarity + complementarity gate
  double mu_min = 1e-8;      // final complementarity level
  double psd_epsilon = 1e-6; // margin for matrix inequalities
};

enum class SolveStatus { optimal, infeasible, max_iters };

const char* to_string(SolveStatus status);

struct SynthesisResult {
  Eigen::MatrixXd k;           // nu x nx block of the decision vector
  Eigen::VectorXd kappa;       // full decision vector
  Eigen::VectorXd slacks;
  double objective_value = 0.0;
  Eigen::VectorXd residuals;   // g_c(kappa) per constraint, slack folded in
  std::vector<std::string> labels;
  SolveStatus status = SolveStatus::max_iters;
  double kkt_residual = 0.0;   // max(stationarity, complementarity) at exit
  int newton_iterations = 0;
  std::optional<Eigen::MatrixXd> p;  // Lyapunov matrix, attached by the pipeline
};

/// Logarithmic-barrier interior-point solve of the compiled convex QCQP.
/// Phase-I minimizes a single feasibility slack when no strictly feasible
/// start is known; phase-II follows the central path with damped Newton
/// steps. Throws numerical_failure when the Newton system cannot be
/// regularized.
SynthesisResult solve_qcqp(const compiler::QcqpProblem& problem, const SolverConfig& cfg);

/// Lifts slacks above their constraints and moves bound variables off zero;
/// the result is strictly feasible whenever the PSD blocks already are.
Eigen::VectorXd lift_slacks(const compiler::QcqpProblem& problem, Eigen::VectorXd kappa);

/// Strict interior test (constraints, PSD blocks, sign bounds).
bool strictly_feasible(const compiler::QcqpProblem& problem, const Eigen::VectorXd& kappa);

struct LyapunovSearch {
  Eigen::MatrixXd p;      // Q^{-1}
  Eigen::MatrixXd k_lmi;  // Y Q^{-1}; the pipeline discards it
};

/// Solves the stabilizing-LMI feasibility program (variables Q = P^{-1},
/// Y = K Q, diagonal margin Lambda) with the same barrier machinery and
/// returns P = Q^{-1}. Throws infeasible when (A, B) cannot be stabilized at
/// rate beta_v.
LyapunovSearch find_p(const systems::LinearSystem& sys, double beta_v, const SolverConfig& cfg);

/// Maximum eigenvalue of (A+BK)'P + P(A+BK) + beta_v P; negative means the
/// closed-loop Lyapunov inequality holds with margin.
double verify_lyapunov(const Eigen::MatrixXd& p, const Eigen::MatrixXd& a,
                       const Eigen::MatrixXd& b, const Eigen::MatrixXd& k, double beta_v);

}  // namespace css::solvers
