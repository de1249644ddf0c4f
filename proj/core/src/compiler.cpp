#include "css/compiler.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "css/error.hpp"
#include "css/linalg.hpp"

namespace css::compiler {

Eigen::MatrixXd DecisionLayout::unpack_k(const Eigen::VectorXd& kappa) const {
  return Eigen::Map<const Eigen::MatrixXd>(kappa.data(), nu, nx);
}

namespace {

/// Affine form of (drift + input * K) * x_k in the decision vector.
AffineForm state_output_form(const Eigen::RowVectorXd& drift, const Eigen::RowVectorXd& input,
                             const Eigen::VectorXd& vertex, const DecisionLayout& layout) {
  AffineForm form;
  form.coeffs = Eigen::VectorXd::Zero(layout.size());
  form.offset = drift.dot(vertex);
  for (Eigen::Index i = 0; i < layout.nu; ++i) {
    if (input[i] == 0.0) continue;
    for (Eigen::Index j = 0; j < layout.nx; ++j) {
      form.coeffs[layout.k_index(i, j)] = input[i] * vertex[j];
    }
  }
  return form;
}

/// Rows of scale * S * K' * input'; their squared sum is the variance term
/// scale^2 * (input K) Sigma (input K)'.
void append_noise_rows(std::vector<AffineForm>& squares, const Eigen::MatrixXd& sigma_root,
                       const Eigen::RowVectorXd& input, double scale,
                       const DecisionLayout& layout) {
  for (Eigen::Index l = 0; l < sigma_root.rows(); ++l) {
    AffineForm form;
    form.coeffs = Eigen::VectorXd::Zero(layout.size());
    form.offset = 0.0;
    bool nonzero = false;
    for (Eigen::Index p = 0; p < sigma_root.cols(); ++p) {
      const double s_lp = sigma_root(l, p);
      if (s_lp == 0.0) continue;
      for (Eigen::Index i = 0; i < layout.nu; ++i) {
        if (input[i] == 0.0) continue;
        form.coeffs[layout.k_index(i, p)] += scale * s_lp * input[i];
        nonzero = true;
      }
    }
    if (nonzero) squares.push_back(std::move(form));
  }
}

void attach_slack(SquaredAffineConstraint& c, std::optional<Eigen::Index> slack_index) {
  if (slack_index) {
    c.slack_index = slack_index;
    c.linear.coeffs[*slack_index] -= 1.0;
  }
}

/// x_k' Q(K) x_k with Q(K) = -[(A+BK)'P + P(A+BK) + beta_v P], affine in K.
AffineForm q_quadratic_form(const systems::LinearSystem& sys, const Eigen::MatrixXd& p,
                            double beta_v, const Eigen::VectorXd& vertex,
                            const DecisionLayout& layout) {
  AffineForm form;
  form.coeffs = Eigen::VectorXd::Zero(layout.size());
  const Eigen::MatrixXd open_loop = sys.a.transpose() * p + p * sys.a + beta_v * p;
  form.offset = -vertex.dot(open_loop * vertex);
  const Eigen::VectorXd btpx = sys.b.transpose() * p * vertex;  // (B'P x_k)
  for (Eigen::Index i = 0; i < layout.nu; ++i) {
    for (Eigen::Index j = 0; j < layout.nx; ++j) {
      form.coeffs[layout.k_index(i, j)] = -2.0 * btpx[i] * vertex[j];
    }
  }
  return form;
}

}  // namespace

SquaredAffineConstraint compile_cbf(const systems::LieCoefficients& lie, double alpha_c,
                                    const Eigen::VectorXd& vertex,
                                    const Eigen::MatrixXd& sigma_root, double t, double eta,
                                    const DecisionLayout& layout,
                                    std::optional<Eigen::Index> slack_index, std::string label) {
  SquaredAffineConstraint c;
  c.label = std::move(label);
  AffineForm state = state_output_form(lie.drift, lie.input, vertex, layout);
  const double shift = alpha_c - t;
  c.linear.coeffs = 2.0 * shift * state.coeffs;
  c.linear.offset = 2.0 * shift * state.offset + shift * shift - t * t * eta;
  c.squares.push_back(std::move(state));
  append_noise_rows(c.squares, sigma_root, lie.input, 1.0, layout);
  attach_slack(c, slack_index);
  return c;
}

SquaredAffineConstraint compile_clf_equilibrium(const systems::LinearSystem& sys,
                                                const Eigen::MatrixXd& p, double beta_v,
                                                const Eigen::VectorXd& vertex,
                                                const Eigen::MatrixXd& sigma_root, double t,
                                                double eta_v, const DecisionLayout& layout,
                                                std::optional<Eigen::Index> slack_index,
                                                std::string label, bool literal) {
  SquaredAffineConstraint c;
  c.label = std::move(label);
  AffineForm q_form = q_quadratic_form(sys, p, beta_v, vertex, layout);
  if (literal) {
    c.linear.coeffs = Eigen::VectorXd::Zero(layout.size());
    c.linear.offset = t * t * (1.0 - eta_v);
  } else {
    c.linear.coeffs = -2.0 * t * q_form.coeffs;
    c.linear.offset = -2.0 * t * q_form.offset + t * t * (1.0 - eta_v);
  }
  c.squares.push_back(std::move(q_form));
  Eigen::RowVectorXd pb_row = (sys.b.transpose() * p * vertex).transpose();
  append_noise_rows(c.squares, sigma_root, pb_row, 2.0, layout);
  attach_slack(c, slack_index);
  return c;
}

PsdBlock clf_psd_block(const systems::LinearSystem& sys, const Eigen::MatrixXd& p, double beta_v,
                       double epsilon, const DecisionLayout& layout) {
  PsdBlock block;
  block.label = "clf_q";
  block.epsilon = epsilon;
  block.constant = -symmetrize(sys.a.transpose() * p + p * sys.a + beta_v * p);
  for (Eigen::Index i = 0; i < layout.nu; ++i) {
    const Eigen::VectorXd pb = p * sys.b.col(i);
    for (Eigen::Index j = 0; j < layout.nx; ++j) {
      Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(sys.nx(), sys.nx());
      coeff.col(j) -= pb;
      coeff.row(j) -= pb.transpose();
      block.coeffs.emplace_back(layout.k_index(i, j), std::move(coeff));
    }
  }
  return block;
}

SquaredAffineConstraint compile_clf_path(const systems::LieCoefficients& lie, double beta_c,
                                         const Eigen::VectorXd& vertex,
                                         const Eigen::MatrixXd& sigma_root, double t,
                                         double eta_v, const DecisionLayout& layout,
                                         std::optional<Eigen::Index> slack_index,
                                         std::string label) {
  SquaredAffineConstraint c;
  c.label = std::move(label);
  AffineForm state = state_output_form(lie.drift, lie.input, vertex, layout);
  const double shift = beta_c + t;
  c.linear.coeffs = 2.0 * shift * state.coeffs;
  c.linear.offset = 2.0 * shift * state.offset + shift * shift - t * t * eta_v;
  c.squares.push_back(std::move(state));
  append_noise_rows(c.squares, sigma_root, lie.input, 1.0, layout);
  attach_slack(c, slack_index);
  return c;
}

SquaredAffineConstraint compile_actuator(const Eigen::RowVectorXd& actuator_row,
                                         double actuator_offset, const Eigen::VectorXd& vertex,
                                         const Eigen::MatrixXd& sigma_root, double t,
                                         double eta_u, const DecisionLayout& layout,
                                         std::optional<Eigen::Index> slack_index,
                                         std::string label) {
  SquaredAffineConstraint c;
  c.label = std::move(label);
  const Eigen::RowVectorXd zero_drift = Eigen::RowVectorXd::Zero(vertex.size());
  AffineForm state = state_output_form(zero_drift, actuator_row, vertex, layout);
  const double shift = t - actuator_offset;
  c.linear.coeffs = 2.0 * shift * state.coeffs;
  c.linear.offset = 2.0 * shift * state.offset + shift * shift - t * t * eta_u;
  c.squares.push_back(std::move(state));
  append_noise_rows(c.squares, sigma_root, actuator_row, 1.0, layout);
  attach_slack(c, slack_index);
  return c;
}

int shared_relative_degree(const SynthesisModel& model) {
  int r = 0;
  auto consider = [&](const Eigen::RowVectorXd& row, const char* what) {
    const int ri = systems::relative_degree(model.sys, row);
    if (r == 0) {
      r = ri;
    } else if (ri != r) {
      throw Error(ErrorCode::mixed_relative_degree,
                  std::string(what) + " has relative degree " + std::to_string(ri) +
                      ", expected " + std::to_string(r));
    }
  };
  for (Eigen::Index face : model.cbf_faces) {
    consider(-model.cell.face_normals().row(face), "barrier face");
  }
  if (model.exit) consider(model.exit->normal, "exit face");
  if (r == 0) {
    throw Error(ErrorCode::invalid_argument, "no barrier or exit face to infer r from");
  }
  return r;
}

QcqpProblem assemble(const SynthesisModel& model) {
  const auto& cell = model.cell;
  const auto& vertices = cell.vertices();
  if (vertices.empty()) {
    throw Error(ErrorCode::empty, "cell has no vertices");
  }
  if (model.task == Task::equilibrium && !model.lyapunov_p) {
    throw Error(ErrorCode::missing_p, "equilibrium task requires a Lyapunov matrix");
  }
  if (model.actuator_normals.rows() != model.actuator_offsets.size()) {
    throw Error(ErrorCode::dimension_mismatch, "actuator rows/offsets disagree");
  }

  // CBF family: drop the exit face even if the caller left it in.
  std::vector<Eigen::Index> cbf_faces = model.cbf_faces;
  if (model.exit_cell_face) {
    std::erase(cbf_faces, *model.exit_cell_face);
  }

  const int r = shared_relative_degree(model);
  if (model.alpha.size() != r) {
    throw Error(ErrorCode::dimension_mismatch, "alpha must have length r");
  }
  if (model.exit && model.exit->beta.size() != r) {
    throw Error(ErrorCode::dimension_mismatch, "beta must have length r");
  }

  const Eigen::Index n_p = static_cast<Eigen::Index>(vertices.size());
  const Eigen::Index n_act = model.actuator_normals.rows();
  const bool has_clf = model.task == Task::equilibrium || model.exit.has_value();
  const Eigen::Index quad_count =
      static_cast<Eigen::Index>(cbf_faces.size()) * n_p + (has_clf ? n_p : 0) + n_act * n_p;

  QcqpProblem problem;
  problem.layout.nu = model.sys.nu();
  problem.layout.nx = model.sys.nx();
  problem.layout.slack_count = model.options.slack ? quad_count : 0;

  // Anchor-point covariance roots, one per vertex.
  std::vector<Eigen::MatrixXd> roots;
  roots.reserve(static_cast<std::size_t>(n_p));
  for (const auto& v : vertices) roots.push_back(psd_sqrt(model.sigma(v)));

  Eigen::Index next_slack = 0;
  auto take_slack = [&]() -> std::optional<Eigen::Index> {
    if (!model.options.slack) return std::nullopt;
    return problem.layout.slack_index(next_slack++);
  };

  const double t = model.options.t;

  for (Eigen::Index face : cbf_faces) {
    systems::BarrierFace barrier;
    barrier.row = -cell.face_normals().row(face);
    barrier.offset = cell.face_offsets()[face];
    barrier.alpha = model.alpha;
    const systems::LieCoefficients lie = systems::cbf_coefficients(model.sys, barrier, r);
    const double alpha_c = model.alpha[0] * barrier.offset;

    double eta_floor = std::numeric_limits<double>::infinity();
    if (model.options.conservative_eta) {
      for (const auto& v : vertices) eta_floor = std::min(eta_floor, model.budget(v, face));
    }
    for (Eigen::Index k = 0; k < n_p; ++k) {
      const double eta =
          model.options.conservative_eta ? eta_floor : model.budget(vertices[static_cast<std::size_t>(k)], face);
      problem.constraints.push_back(compile_cbf(
          lie, alpha_c, vertices[static_cast<std::size_t>(k)], roots[static_cast<std::size_t>(k)],
          t, eta, problem.layout, take_slack(),
          "cbf[" + std::to_string(face) + "][" + std::to_string(k) + "]"));
    }
  }

  if (model.task == Task::equilibrium) {
    for (Eigen::Index k = 0; k < n_p; ++k) {
      problem.constraints.push_back(compile_clf_equilibrium(
          model.sys, *model.lyapunov_p, model.beta_v0, vertices[static_cast<std::size_t>(k)],
          roots[static_cast<std::size_t>(k)], t, model.options.eta_v, problem.layout,
          take_slack(), "clf[" + std::to_string(k) + "]", model.options.cclf_literal));
    }
    problem.psd_blocks.push_back(clf_psd_block(model.sys, *model.lyapunov_p, model.beta_v0,
                                               model.options.psd_epsilon, problem.layout));
  } else if (model.exit) {
    const systems::LieCoefficients lie = systems::clf_path_coefficients(model.sys, *model.exit, r);
    const double beta_c = model.exit->beta[0] * model.exit->offset;
    for (Eigen::Index k = 0; k < n_p; ++k) {
      problem.constraints.push_back(compile_clf_path(
          lie, beta_c, vertices[static_cast<std::size_t>(k)], roots[static_cast<std::size_t>(k)],
          t, model.options.eta_v, problem.layout, take_slack(),
          "clf[" + std::to_string(k) + "]"));
    }
  }

  for (Eigen::Index j = 0; j < n_act; ++j) {
    for (Eigen::Index k = 0; k < n_p; ++k) {
      problem.constraints.push_back(compile_actuator(
          model.actuator_normals.row(j), model.actuator_offsets[j],
          vertices[static_cast<std::size_t>(k)], roots[static_cast<std::size_t>(k)], t,
          model.options.eta_u, problem.layout, take_slack(),
          "act[" + std::to_string(j) + "][" + std::to_string(k) + "]"));
    }
  }

  problem.objective_quad_diag = Eigen::VectorXd::Zero(problem.layout.size());
  problem.objective_quad_diag.head(problem.layout.k_count()).setOnes();
  problem.objective_linear = Eigen::VectorXd::Zero(problem.layout.size());
  for (Eigen::Index s = 0; s < problem.layout.slack_count; ++s) {
    const Eigen::Index idx = problem.layout.slack_index(s);
    problem.objective_linear[idx] = model.options.rho;
    problem.nonneg.push_back(idx);
  }
  return problem;
}

std::string qcqp_debug_json(const QcqpProblem& problem) {
  nlohmann::json j;
  j["decision"] = {{"nu", problem.layout.nu},
                   {"nx", problem.layout.nx},
                   {"slacks", problem.layout.slack_count},
                   {"extra", problem.layout.extra_count}};
  auto form_json = [](const AffineForm& f) {
    nlohmann::json out;
    out["coeffs"] = std::vector<double>(f.coeffs.data(), f.coeffs.data() + f.coeffs.size());
    out["offset"] = f.offset;
    return out;
  };
  j["constraints"] = nlohmann::json::array();
  for (const auto& c : problem.constraints) {
    nlohmann::json cj;
    cj["label"] = c.label;
    cj["squares"] = nlohmann::json::array();
    for (const auto& s : c.squares) cj["squares"].push_back(form_json(s));
    cj["linear"] = form_json(c.linear);
    if (c.slack_index) cj["slack_index"] = *c.slack_index;
    j["constraints"].push_back(std::move(cj));
  }
  j["psd_blocks"] = nlohmann::json::array();
  for (const auto& b : problem.psd_blocks) {
    nlohmann::json bj;
    bj["label"] = b.label;
    bj["epsilon"] = b.epsilon;
    bj["dim"] = b.constant.rows();
    bj["terms"] = b.coeffs.size();
    j["psd_blocks"].push_back(std::move(bj));
  }
  j["objective"] = {
      {"quad_diag", std::vector<double>(problem.objective_quad_diag.data(),
                                        problem.objective_quad_diag.data() +
                                            problem.objective_quad_diag.size())},
      {"linear", std::vector<double>(problem.objective_linear.data(),
                                     problem.objective_linear.data() +
                                         problem.objective_linear.size())}};
  j["nonneg"] = problem.nonneg;
  return j.dump(2);
}

}  // namespace css::compiler
