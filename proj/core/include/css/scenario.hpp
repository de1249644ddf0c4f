#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "css/chance.hpp"
#include "css/compiler.hpp"
#include "css/geometry.hpp"
#include "css/simulate.hpp"
#include "css/solvers.hpp"
#include "css/systems.hpp"

namespace css::cli {

/// Scenario file contents after strict schema validation (unknown keys are
/// hard errors). `polygon` is the 2-D position polygon for the built-in
/// double integrator, or the full-state cell for a custom system.
struct Scenario {
  compiler::Task task = compiler::Task::equilibrium;
  bool builtin_double_integrator = true;
  systems::LinearSystem system;
  Eigen::MatrixXd polygon_normals;
  Eigen::VectorXd polygon_offsets;
  double vbound = 0.0;
  std::optional<Eigen::Index> exit_face;          // original polygon face index
  std::vector<Eigen::Index> excluded_faces;       // extra CBF exclusions
  std::optional<Eigen::VectorXd> equilibrium_point;  // position or full state
  std::optional<Eigen::VectorXd> x0;                 // simulation start, position or full state
  chance::NoiseModel noise;
  std::vector<double> sigma_scales;
  std::optional<std::pair<Eigen::MatrixXd, Eigen::VectorXd>> actuators;

  struct Params {
    double t = 1.0;
    double alpha = 1.0;
    double beta_v = 1.0;
    double eta_v = 0.2;
    double eta_u = 0.2;
    double rho = 1e3;
    bool slack = true;
    double sigma_synth = 1.0;
    bool conservative_eta = false;
    bool cclf_literal = false;
    bool include_velocity_cbf = false;
  } params;

  solvers::SolverConfig solver;
  simulate::SimConfig sim;
  std::string source_json;  // canonical text for hashing / manifests
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);

/// Scenario resolved into a synthesis-ready model. The model lives in the
/// shifted frame (x_e at the origin) for equilibrium tasks; `cell` is the
/// unshifted full-state cell used for simulation.
struct ScenarioModel {
  compiler::SynthesisModel model;
  geometry::Polytope cell;
  Eigen::VectorXd x_e;  // zero for path tasks
  Eigen::VectorXd x0;   // resolved simulation start (defaults to the cell center)
  std::optional<Eigen::Index> exit_cell_face;
  int relative_degree = 0;
};

ScenarioModel build_model(const Scenario& scenario);

/// Full synthesis pipeline: resolve the scenario, search for P (equilibrium
/// tasks), compile the QCQP, and solve it with the LMI gain as the warm
/// start. The Lyapunov matrix is attached to the result.
struct SynthesisOutput {
  solvers::SynthesisResult result;
  ScenarioModel scenario_model;
  compiler::QcqpProblem problem;
};

SynthesisOutput run_synthesis(const Scenario& scenario);

struct Controller {
  Eigen::MatrixXd k;
  std::optional<Eigen::MatrixXd> p;
  Eigen::VectorXd slacks;
  std::string status;
  double objective = 0.0;
};

std::string controller_to_json(const Controller& controller);
Controller parse_controller(const std::string& json_text);
Controller load_controller(const std::string& path);

}  // namespace css::cli
