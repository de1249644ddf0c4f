#include "css/scenario.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "css/error.hpp"
#include "css/linalg.hpp"

namespace css::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& message) {
  throw Error(ErrorCode::schema, message);
}

void check_keys(const json& j, const char* where, std::initializer_list<const char*> required,
                std::initializer_list<const char*> optional) {
  if (!j.is_object()) fail(std::string(where) + " must be an object");
  for (const char* key : required) {
    if (!j.contains(key)) fail(std::string(where) + " is missing required field '" + key + "'");
  }
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : required) known = known || key == k;
    for (const char* k : optional) known = known || key == k;
    if (!known) fail(std::string(where) + " has unknown field '" + key + "'");
  }
}

double as_number(const json& j, const char* where) {
  if (!j.is_number()) fail(std::string(where) + " must be a number");
  return j.get<double>();
}

Eigen::VectorXd as_vector(const json& j, const char* where) {
  if (!j.is_array() || j.empty()) fail(std::string(where) + " must be a non-empty array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = as_number(j[i], where);
  }
  return v;
}

Eigen::MatrixXd as_matrix(const json& j, const char* where) {
  if (!j.is_array() || j.empty()) fail(std::string(where) + " must be a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) fail(std::string(where) + " rows must be non-empty arrays");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_array() || j[i].size() != cols) {
      fail(std::string(where) + " rows must all have the same length");
    }
    for (std::size_t c = 0; c < cols; ++c) {
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = as_number(j[i][c], where);
    }
  }
  return m;
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::missing_data, "cannot open " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

Scenario parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("scenario is not valid JSON: ") + e.what());
  }
  check_keys(j, "scenario", {"task", "system", "polytope", "noise"},
             {"vbound", "exit_face", "excluded_faces", "equilibrium_point", "x0", "sigma_scale",
              "actuators", "params", "solver", "sim"});

  Scenario s;
  s.source_json = json_text;

  const std::string task = j["task"].is_string() ? j["task"].get<std::string>() : "";
  if (task == "equilibrium") {
    s.task = compiler::Task::equilibrium;
  } else if (task == "path") {
    s.task = compiler::Task::path;
  } else {
    fail("task must be \"equilibrium\" or \"path\"");
  }

  if (j["system"].is_string()) {
    if (j["system"].get<std::string>() != "double_integrator_2d") {
      fail("unknown built-in system '" + j["system"].get<std::string>() + "'");
    }
    s.builtin_double_integrator = true;
    s.system = systems::double_integrator_2d();
    if (!j.contains("vbound")) fail("double_integrator_2d scenarios require 'vbound'");
    s.vbound = as_number(j["vbound"], "vbound");
    if (!(s.vbound > 0.0)) fail("vbound must be positive");
  } else {
    check_keys(j["system"], "system", {"A", "B"}, {});
    s.builtin_double_integrator = false;
    s.system.a = as_matrix(j["system"]["A"], "system.A");
    s.system.b = as_matrix(j["system"]["B"], "system.B");
    if (s.system.a.rows() != s.system.a.cols() || s.system.b.rows() != s.system.a.rows()) {
      fail("system matrices have inconsistent shapes");
    }
  }

  check_keys(j["polytope"], "polytope", {"A", "b"}, {});
  s.polygon_normals = as_matrix(j["polytope"]["A"], "polytope.A");
  s.polygon_offsets = as_vector(j["polytope"]["b"], "polytope.b");
  if (s.polygon_offsets.size() != s.polygon_normals.rows()) {
    fail("polytope.b length must match polytope.A rows");
  }

  if (j.contains("exit_face")) {
    if (!j["exit_face"].is_number_integer()) fail("exit_face must be an integer");
    s.exit_face = j["exit_face"].get<Eigen::Index>();
  }
  if (j.contains("excluded_faces")) {
    if (!j["excluded_faces"].is_array()) fail("excluded_faces must be an array");
    for (const auto& e : j["excluded_faces"]) {
      if (!e.is_number_integer()) fail("excluded_faces entries must be integers");
      s.excluded_faces.push_back(e.get<Eigen::Index>());
    }
  }
  if (j.contains("equilibrium_point")) {
    s.equilibrium_point = as_vector(j["equilibrium_point"], "equilibrium_point");
  }
  if (j.contains("x0")) {
    s.x0 = as_vector(j["x0"], "x0");
  }

  check_keys(j["noise"], "noise", {"sigma0"}, {"linear"});
  Eigen::MatrixXd sigma0 = as_matrix(j["noise"]["sigma0"], "noise.sigma0");
  std::vector<Eigen::MatrixXd> linear;
  if (j["noise"].contains("linear")) {
    if (!j["noise"]["linear"].is_array()) fail("noise.linear must be an array of matrices");
    for (const auto& term : j["noise"]["linear"]) {
      linear.push_back(as_matrix(term, "noise.linear[]"));
    }
  }
  s.noise = chance::NoiseModel(std::move(sigma0), std::move(linear));

  if (j.contains("sigma_scale")) {
    if (!j["sigma_scale"].is_array() || j["sigma_scale"].empty()) {
      fail("sigma_scale must be a non-empty array");
    }
    for (const auto& v : j["sigma_scale"]) s.sigma_scales.push_back(as_number(v, "sigma_scale"));
  } else {
    s.sigma_scales = {1.0};
  }

  if (j.contains("actuators")) {
    check_keys(j["actuators"], "actuators", {"A", "b"}, {});
    Eigen::MatrixXd au = as_matrix(j["actuators"]["A"], "actuators.A");
    Eigen::VectorXd bu = as_vector(j["actuators"]["b"], "actuators.b");
    if (bu.size() != au.rows()) fail("actuators.b length must match actuators.A rows");
    if (au.cols() != s.system.b.cols()) fail("actuators.A columns must match the input count");
    s.actuators = std::make_pair(std::move(au), std::move(bu));
  }

  if (j.contains("params")) {
    const json& p = j["params"];
    check_keys(p, "params", {},
               {"t", "alpha", "beta_V", "eta_v", "eta_u", "rho", "slack", "sigma_synth",
                "conservative_eta", "cclf_literal", "include_velocity_cbf"});
    if (p.contains("t")) s.params.t = as_number(p["t"], "params.t");
    if (p.contains("alpha")) s.params.alpha = as_number(p["alpha"], "params.alpha");
    if (p.contains("beta_V")) s.params.beta_v = as_number(p["beta_V"], "params.beta_V");
    if (p.contains("eta_v")) s.params.eta_v = as_number(p["eta_v"], "params.eta_v");
    if (p.contains("eta_u")) s.params.eta_u = as_number(p["eta_u"], "params.eta_u");
    if (p.contains("rho")) s.params.rho = as_number(p["rho"], "params.rho");
    if (p.contains("slack")) {
      if (!p["slack"].is_boolean()) fail("params.slack must be a boolean");
      s.params.slack = p["slack"].get<bool>();
    }
    if (p.contains("sigma_synth")) s.params.sigma_synth = as_number(p["sigma_synth"], "params.sigma_synth");
    for (const char* flag : {"conservative_eta", "cclf_literal", "include_velocity_cbf"}) {
      if (p.contains(flag) && !p[flag].is_boolean()) {
        fail(std::string("params.") + flag + " must be a boolean");
      }
    }
    if (p.contains("conservative_eta")) s.params.conservative_eta = p["conservative_eta"].get<bool>();
    if (p.contains("cclf_literal")) s.params.cclf_literal = p["cclf_literal"].get<bool>();
    if (p.contains("include_velocity_cbf")) {
      s.params.include_velocity_cbf = p["include_velocity_cbf"].get<bool>();
    }
    if (!(s.params.t > 0.0)) fail("params.t must be positive");
    if (!(s.params.alpha > 0.0)) fail("params.alpha must be positive");
    if (!(s.params.beta_v > 0.0)) fail("params.beta_V must be positive");
    if (s.params.eta_v < 0.0 || s.params.eta_v > 1.0) fail("params.eta_v must be in [0, 1]");
    if (s.params.eta_u < 0.0 || s.params.eta_u > 1.0) fail("params.eta_u must be in [0, 1]");
  }

  if (j.contains("solver")) {
    const json& c = j["solver"];
    check_keys(c, "solver", {},
               {"barrier_mu0", "barrier_factor", "max_newton_iters", "max_outer_iters",
                "tol_kkt", "mu_min", "psd_epsilon"});
    if (c.contains("barrier_mu0")) s.solver.barrier_mu0 = as_number(c["barrier_mu0"], "solver.barrier_mu0");
    if (c.contains("barrier_factor")) s.solver.barrier_factor = as_number(c["barrier_factor"], "solver.barrier_factor");
    if (c.contains("max_newton_iters")) s.solver.max_newton_iters = static_cast<int>(as_number(c["max_newton_iters"], "solver.max_newton_iters"));
    if (c.contains("max_outer_iters")) s.solver.max_outer_iters = static_cast<int>(as_number(c["max_outer_iters"], "solver.max_outer_iters"));
    if (c.contains("tol_kkt")) s.solver.tol_kkt = as_number(c["tol_kkt"], "solver.tol_kkt");
    if (c.contains("mu_min")) s.solver.mu_min = as_number(c["mu_min"], "solver.mu_min");
    if (c.contains("psd_epsilon")) s.solver.psd_epsilon = as_number(c["psd_epsilon"], "solver.psd_epsilon");
    if (!(s.solver.barrier_mu0 > 0.0) || !(s.solver.barrier_factor > 1.0)) {
      fail("solver.barrier_mu0 must be positive and solver.barrier_factor > 1");
    }
  }

  if (j.contains("sim")) {
    const json& c = j["sim"];
    check_keys(c, "sim", {}, {"dt", "horizon", "seed", "runs"});
    if (c.contains("dt")) s.sim.dt = as_number(c["dt"], "sim.dt");
    if (c.contains("horizon")) s.sim.horizon = as_number(c["horizon"], "sim.horizon");
    if (c.contains("seed")) {
      if (!c["seed"].is_number_integer() && !c["seed"].is_number_unsigned()) {
        fail("sim.seed must be an integer");
      }
      s.sim.seed = c["seed"].get<std::uint64_t>();
    }
    if (c.contains("runs")) {
      if (!c["runs"].is_number_unsigned() && !c["runs"].is_number_integer()) {
        fail("sim.runs must be an integer");
      }
      s.sim.runs = c["runs"].get<std::size_t>();
    }
    if (!(s.sim.dt > 0.0) || s.sim.horizon < s.sim.dt) fail("sim needs dt > 0 and horizon >= dt");
  }

  if (s.task == compiler::Task::path && !s.exit_face) fail("path scenarios require exit_face");

  return s;
}

Scenario load_scenario(const std::string& path) { return parse_scenario(read_file(path)); }

namespace {

/// Maps an input-file face index through a polytope's redundancy reduction.
Eigen::Index reduced_face_index(const geometry::Polytope& p, Eigen::Index original,
                                const char* what) {
  const auto& map = p.original_face_indices();
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(map.size()); ++i) {
    if (map[static_cast<std::size_t>(i)] == original) return i;
  }
  fail(std::string(what) + " " + std::to_string(original) +
       " refers to a face that was dropped as redundant");
}

}  // namespace

ScenarioModel build_model(const Scenario& scenario) {
  ScenarioModel out;

  const geometry::Polytope polygon = geometry::Polytope::from_halfspaces(
      scenario.polygon_normals, scenario.polygon_offsets);

  std::vector<Eigen::Index> cbf_faces;
  std::optional<Eigen::Index> exit_cell_face;

  if (scenario.builtin_double_integrator) {
    if (polygon.dim() != 2) fail("double_integrator_2d scenarios need a 2-D polygon");
    systems::LiftedCell lifted = systems::lift_position_constraints(polygon, scenario.vbound);
    out.cell = lifted.cell;
    cbf_faces = lifted.position_faces;
    if (scenario.params.include_velocity_cbf) {
      cbf_faces.insert(cbf_faces.end(), lifted.velocity_faces.begin(),
                       lifted.velocity_faces.end());
    }
  } else {
    if (polygon.dim() != scenario.system.a.rows()) {
      fail("polytope dimension must match the system state dimension");
    }
    out.cell = polygon;
    for (Eigen::Index i = 0; i < out.cell.num_faces(); ++i) cbf_faces.push_back(i);
  }

  // Face references in the input file use original polytope row indices; map
  // them through the polygon reduction and then through the lifted cell.
  auto to_cell_face = [&](Eigen::Index original, const char* what) {
    if (scenario.builtin_double_integrator) {
      const Eigen::Index polygon_face = reduced_face_index(polygon, original, what);
      return reduced_face_index(out.cell, polygon_face, what);
    }
    return reduced_face_index(out.cell, original, what);
  };
  for (Eigen::Index original : scenario.excluded_faces) {
    std::erase(cbf_faces, to_cell_face(original, "excluded face"));
  }
  if (scenario.exit_face) {
    exit_cell_face = to_cell_face(*scenario.exit_face, "exit face");
  }

  // Resolve the equilibrium point to a full state and require it to be an
  // actual equilibrium strictly inside the cell.
  const Eigen::Index nx = scenario.system.a.rows();
  Eigen::VectorXd x_e = Eigen::VectorXd::Zero(nx);
  if (scenario.task == compiler::Task::equilibrium && scenario.equilibrium_point) {
    const Eigen::VectorXd& given = *scenario.equilibrium_point;
    if (scenario.builtin_double_integrator && given.size() == 2) {
      x_e[0] = given[0];
      x_e[2] = given[1];
    } else if (given.size() == nx) {
      x_e = given;
    } else {
      fail("equilibrium_point must have length 2 (position) or n_x");
    }
  }
  if (scenario.task == compiler::Task::equilibrium) {
    if ((scenario.system.a * x_e).lpNorm<Eigen::Infinity>() > 1e-9) {
      throw Error(ErrorCode::invalid_argument,
                  "equilibrium_point is not an equilibrium of the dynamics");
    }
    const geometry::FaceDistance fd(out.cell);
    if ((fd(x_e).array() <= 1e-9).any()) {
      throw Error(ErrorCode::invalid_argument,
                  "equilibrium_point must lie strictly inside the cell");
    }
  }

  // Affine noise must stay PSD over the cell: checked at vertices and at 100
  // interior samples.
  if (scenario.noise.dim() != nx) {
    throw Error(ErrorCode::dimension_mismatch, "noise dimension must match the state dimension");
  }
  if (!scenario.noise.is_constant()) {
    for (const auto& v : out.cell.vertices()) {
      if (min_eigenvalue(scenario.noise.covariance(v)) < -1e-10) {
        throw Error(ErrorCode::non_psd, "noise covariance is indefinite at a cell vertex");
      }
    }
    for (const auto& x : geometry::sample_interior(out.cell, 100, 0x90d)) {
      if (min_eigenvalue(scenario.noise.covariance(x)) < -1e-10) {
        throw Error(ErrorCode::non_psd, "noise covariance is indefinite inside the cell");
      }
    }
  }

  const geometry::Polytope work_cell =
      scenario.task == compiler::Task::equilibrium ? out.cell.shifted(x_e) : out.cell;

  compiler::SynthesisModel model;
  model.sys = scenario.system;
  model.cell = work_cell;
  model.budget = geometry::risk_budget_for(work_cell);
  model.cbf_faces = cbf_faces;
  model.task = scenario.task;
  model.beta_v0 = scenario.params.beta_v;
  model.exit_cell_face = exit_cell_face;
  model.actuator_normals = Eigen::MatrixXd::Zero(0, scenario.system.b.cols());
  model.actuator_offsets = Eigen::VectorXd::Zero(0);

  if (scenario.actuators) {
    model.actuator_normals = scenario.actuators->first;
    model.actuator_offsets = scenario.actuators->second;
  }

  // One shared relative degree, probed on the first barrier (or exit) row.
  Eigen::RowVectorXd probe_row;
  if (!cbf_faces.empty()) {
    probe_row = -work_cell.face_normals().row(cbf_faces.front());
  } else if (exit_cell_face) {
    probe_row = -work_cell.face_normals().row(*exit_cell_face);
  } else {
    fail("scenario has no barrier or exit faces");
  }
  const int r = systems::relative_degree(scenario.system, probe_row);
  model.alpha = Eigen::VectorXd::Constant(r, scenario.params.alpha);

  if (scenario.task == compiler::Task::path) {
    systems::ExitFace exit;
    const Eigen::RowVectorXd row = work_cell.face_normals().row(*exit_cell_face);
    const double norm = row.norm();
    exit.normal = -row / norm;
    exit.offset = work_cell.face_offsets()[*exit_cell_face] / norm;
    exit.beta = Eigen::VectorXd::Constant(r, scenario.params.beta_v);
    model.exit = std::move(exit);
  }

  const double variance_scale = scenario.params.sigma_synth * scenario.params.sigma_synth;
  const chance::NoiseModel noise = scenario.noise;
  const Eigen::VectorXd shift = x_e;
  model.sigma = [noise, shift, variance_scale](const Eigen::VectorXd& x) {
    return Eigen::MatrixXd(variance_scale * noise.covariance(x + shift));
  };

  model.options.t = scenario.params.t;
  model.options.eta_v = scenario.params.eta_v;
  model.options.eta_u = scenario.params.eta_u;
  model.options.rho = scenario.params.rho;
  model.options.slack = scenario.params.slack;
  model.options.conservative_eta = scenario.params.conservative_eta;
  model.options.cclf_literal = scenario.params.cclf_literal;
  model.options.psd_epsilon = scenario.solver.psd_epsilon;

  out.model = std::move(model);
  out.x_e = x_e;
  out.exit_cell_face = exit_cell_face;
  out.relative_degree = r;

  // Simulation start: given (position or full state) or the cell center.
  if (scenario.x0) {
    const Eigen::VectorXd& given = *scenario.x0;
    if (scenario.builtin_double_integrator && given.size() == 2) {
      out.x0 = Eigen::VectorXd::Zero(nx);
      out.x0[0] = given[0];
      out.x0[2] = given[1];
    } else if (given.size() == nx) {
      out.x0 = given;
    } else {
      fail("x0 must have length 2 (position) or n_x");
    }
  } else {
    out.x0 = out.cell.chebyshev_center();
  }
  if (!out.cell.contains(out.x0, 1e-9)) {
    throw Error(ErrorCode::invalid_argument, "x0 lies outside the cell");
  }
  return out;
}

SynthesisOutput run_synthesis(const Scenario& scenario) {
  SynthesisOutput out;
  out.scenario_model = build_model(scenario);

  std::optional<solvers::LyapunovSearch> lyapunov;
  if (scenario.task == compiler::Task::equilibrium) {
    lyapunov = solvers::find_p(scenario.system, scenario.params.beta_v, scenario.solver);

    // The Lyapunov scale is free; pick it so the vertex values of x'Q(K)x
    // sit around the Chebyshev target t, where the chance-CLF band lives.
    // Q(K_lmi) stands in for the final closed loop.
    const Eigen::MatrixXd closed = scenario.system.a + scenario.system.b * lyapunov->k_lmi;
    const Eigen::MatrixXd q_lmi =
        -(closed.transpose() * lyapunov->p + lyapunov->p * closed +
          scenario.params.beta_v * lyapunov->p);
    double q_lo = std::numeric_limits<double>::infinity();
    double q_hi = 0.0;
    for (const auto& v : out.scenario_model.model.cell.vertices()) {
      const double q = v.dot(q_lmi * v);
      q_lo = std::min(q_lo, q);
      q_hi = std::max(q_hi, q);
    }
    if (q_lo > 0.0 && std::isfinite(q_hi)) {
      lyapunov->p *= scenario.params.t / std::sqrt(q_lo * q_hi);
    }
    out.scenario_model.model.lyapunov_p = lyapunov->p;
  }

  out.problem = compiler::assemble(out.scenario_model.model);
  if (lyapunov) {
    // The LMI gain strictly satisfies the PSD block, so scalings of it make
    // reliable interior starting points once the slacks are lifted; pick the one
    // with the smallest warm objective.
    std::optional<Eigen::VectorXd> best;
    double best_score = std::numeric_limits<double>::infinity();
    for (double scale : {1.0, 0.5, 0.25, 0.1, 2.0}) {
      Eigen::VectorXd guess = Eigen::VectorXd::Zero(out.problem.layout.size());
      for (Eigen::Index i = 0; i < out.problem.layout.nu; ++i) {
        for (Eigen::Index j = 0; j < out.problem.layout.nx; ++j) {
          guess[out.problem.layout.k_index(i, j)] = scale * lyapunov->k_lmi(i, j);
        }
      }
      guess = solvers::lift_slacks(out.problem, std::move(guess));
      if (!solvers::strictly_feasible(out.problem, guess)) continue;
      const double score = out.problem.objective(guess);
      if (score < best_score) {
        best_score = score;
        best = std::move(guess);
      }
    }
    if (best) out.problem.initial_guess = std::move(*best);
  }

  out.result = solvers::solve_qcqp(out.problem, scenario.solver);
  if (lyapunov) out.result.p = lyapunov->p;
  return out;
}

std::string controller_to_json(const Controller& controller) {
  json j;
  if (controller.k.size() > 0) j["K"] = matrix_json(controller.k);
  if (controller.p) j["P"] = matrix_json(*controller.p);
  j["slacks"] = vector_json(controller.slacks);
  j["status"] = controller.status;
  j["objective"] = controller.objective;
  return j.dump(2) + "\n";
}

Controller parse_controller(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("controller is not valid JSON: ") + e.what());
  }
  check_keys(j, "controller", {"status"}, {"K", "P", "slacks", "objective"});
  Controller c;
  c.status = j["status"].get<std::string>();
  if (j.contains("K")) c.k = as_matrix(j["K"], "controller.K");
  if (j.contains("P")) c.p = as_matrix(j["P"], "controller.P");
  if (j.contains("slacks") && !j["slacks"].empty()) {
    c.slacks = as_vector(j["slacks"], "controller.slacks");
  }
  if (j.contains("objective")) c.objective = as_number(j["objective"], "controller.objective");
  return c;
}

Controller load_controller(const std::string& path) { return parse_controller(read_file(path)); }

}  // namespace css::cli
