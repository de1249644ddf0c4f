#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "css/chance.hpp"
#include "css/geometry.hpp"
#include "css/systems.hpp"

namespace css::compiler {

/// Decision vector layout: [vec(K) column-major | slacks | extra]. The extra
/// block carries problems that are not gain syntheses (e.g. the Lyapunov
/// matrix search).
struct DecisionLayout {
  Eigen::Index nu = 0;
  Eigen::Index nx = 0;
  Eigen::Index slack_count = 0;
  Eigen::Index extra_count = 0;

  Eigen::Index k_count() const { return nu * nx; }
  Eigen::Index size() const { return k_count() + slack_count + extra_count; }
  Eigen::Index k_index(Eigen::Index i, Eigen::Index j) const { return j * nu + i; }
  Eigen::Index slack_index(Eigen::Index s) const { return k_count() + s; }
  Eigen::Index extra_index(Eigen::Index e) const { return k_count() + slack_count + e; }

  Eigen::MatrixXd unpack_k(const Eigen::VectorXd& kappa) const;
};

/// a(kappa) = coeffs' kappa + offset.
struct AffineForm {
  Eigen::VectorXd coeffs;
  double offset = 0.0;

  double eval(const Eigen::VectorXd& kappa) const { return coeffs.dot(kappa) + offset; }
};

/// Canonical convex quadratic constraint sum_j a_j(kappa)^2 + l(kappa) <= 0.
/// When a slack is attached its -s term is already folded into `linear`.
struct SquaredAffineConstraint {
  std::vector<AffineForm> squares;
  AffineForm linear;
  std::string label;
  std::optional<Eigen::Index> slack_index;

  double eval(const Eigen::VectorXd& kappa) const {
    double value = linear.eval(kappa);
    for (const auto& a : squares) {
      const double ai = a.eval(kappa);
      value += ai * ai;
    }
    return value;
  }
};

/// Affine symmetric-matrix map value(kappa) = constant + sum_v kappa_v C_v,
/// required to satisfy value(kappa) - epsilon I >= 0.
struct PsdBlock {
  Eigen::MatrixXd constant;
  std::vector<std::pair<Eigen::Index, Eigen::MatrixXd>> coeffs;
  double epsilon = 0.0;
  std::string label;

  Eigen::MatrixXd eval(const Eigen::VectorXd& kappa) const {
    Eigen::MatrixXd value = constant;
    for (const auto& [index, c] : coeffs) value += kappa[index] * c;
    return value;
  }
};

/// The compiled program: minimize kappa' diag(q) kappa + c' kappa subject to
/// the quadratic constraints, PSD blocks, and sign bounds.
struct QcqpProblem {
  DecisionLayout layout;
  std::vector<SquaredAffineConstraint> constraints;
  std::vector<PsdBlock> psd_blocks;
  Eigen::VectorXd objective_quad_diag;
  Eigen::VectorXd objective_linear;
  std::vector<Eigen::Index> nonneg;  // kappa_i >= 0
  std::optional<Eigen::VectorXd> initial_guess;

  double objective(const Eigen::VectorXd& kappa) const {
    return kappa.dot(objective_quad_diag.cwiseProduct(kappa)) + objective_linear.dot(kappa);
  }
};

enum class Task { equilibrium, path };

struct CompileOptions {
  double t = 1.0;
  double eta_v = 0.2;
  double eta_u = 0.2;
  double rho = 1e3;
  bool slack = true;
  bool conservative_eta = false;  // min over vertices of eta per face
  bool cclf_literal = false;      // printed CLF form without the -2t x'Qx term
  double psd_epsilon = 1e-6;
};

/// Everything assemble() needs, in one coordinate frame (equilibrium tasks
/// are shifted so x_e = 0 before building this).
struct SynthesisModel {
  systems::LinearSystem sys;
  geometry::Polytope cell;
  geometry::RiskBudget budget;
  std::vector<Eigen::Index> cbf_faces;
  Eigen::VectorXd alpha;  // shared ECBF coefficients, length r
  Task task = Task::equilibrium;
  std::optional<Eigen::MatrixXd> lyapunov_p;  // equilibrium
  double beta_v0 = 1.0;                       // equilibrium CLF rate
  std::optional<systems::ExitFace> exit;      // path, with beta of length r
  std::optional<Eigen::Index> exit_cell_face;
  Eigen::MatrixXd actuator_normals;  // n_hu x n_u (0 rows: no limits)
  Eigen::VectorXd actuator_offsets;
  chance::CovarianceField sigma;  // evaluated in the model frame
  CompileOptions options;
};

/// Chance CBF constraint at one anchor vertex, algebraically identical to the
/// expansion of the Chebyshev certificate:
///   ((drift + input K) x_k)^2 + 2(alpha_c - t)(drift + input K) x_k
///     + |S K' input'|^2 + (alpha_c - t)^2 - t^2 eta <= 0,
/// where `lie` holds the inward barrier-row coefficients and
/// alpha_c = alpha_0 * offset.
SquaredAffineConstraint compile_cbf(const systems::LieCoefficients& lie, double alpha_c,
                                    const Eigen::VectorXd& vertex,
                                    const Eigen::MatrixXd& sigma_root, double t, double eta,
                                    const DecisionLayout& layout,
                                    std::optional<Eigen::Index> slack_index, std::string label);

/// Chance CLF constraint for the quadratic Lyapunov function at one vertex:
/// squares { x_k' Q(K) x_k, rows of 2 S K' B' P x_k }, linear
/// -2 t x_k' Q(K) x_k + t^2 (1 - eta_v), with
/// Q(K) = -[(A+BK)'P + P(A+BK) + beta_v P]. `literal` drops the cross term
/// to reproduce the uncorrected printed inequality.
SquaredAffineConstraint compile_clf_equilibrium(const systems::LinearSystem& sys,
                                                const Eigen::MatrixXd& p, double beta_v,
                                                const Eigen::VectorXd& vertex,
                                                const Eigen::MatrixXd& sigma_root, double t,
                                                double eta_v, const DecisionLayout& layout,
                                                std::optional<Eigen::Index> slack_index,
                                                std::string label, bool literal = false);

/// Q(K) >= epsilon I as an affine PSD block.
PsdBlock clf_psd_block(const systems::LinearSystem& sys, const Eigen::MatrixXd& p, double beta_v,
                       double epsilon, const DecisionLayout& layout);

/// Chance CLF constraint for the exit-face Lyapunov function; `lie` holds the
/// exit-normal coefficients and beta_c = beta_0 * offset.
SquaredAffineConstraint compile_clf_path(const systems::LieCoefficients& lie, double beta_c,
                                         const Eigen::VectorXd& vertex,
                                         const Eigen::MatrixXd& sigma_root, double t,
                                         double eta_v, const DecisionLayout& layout,
                                         std::optional<Eigen::Index> slack_index,
                                         std::string label);

/// Chance actuator constraint for one row of A_u u <= b_u at one vertex.
SquaredAffineConstraint compile_actuator(const Eigen::RowVectorXd& actuator_row,
                                         double actuator_offset, const Eigen::VectorXd& vertex,
                                         const Eigen::MatrixXd& sigma_root, double t,
                                         double eta_u, const DecisionLayout& layout,
                                         std::optional<Eigen::Index> slack_index,
                                         std::string label);

/// Compiles one constraint per (family, face/row, vertex) triple in a fixed
/// deterministic order (CBF by face then vertex, CLF by vertex, ACT by row
/// then vertex), attaches slacks when enabled, and sets the objective
/// ||K||_F^2 + rho * sum(s). Throws missing_p for equilibrium tasks without
/// a Lyapunov matrix and mixed_relative_degree when faces disagree on r.
QcqpProblem assemble(const SynthesisModel& model);

/// Shared relative degree of the model's barrier family (and exit face).
int shared_relative_degree(const SynthesisModel& model);

/// Solver-independent JSON dump of the compiled program.
std::string qcqp_debug_json(const QcqpProblem& problem);

}  // namespace css::compiler
