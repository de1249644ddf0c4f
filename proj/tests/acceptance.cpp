// Acceptance suite: one pass/fail line per criterion. Run with no arguments
// for the full suite or with criterion numbers to select a subset.

#include <chrono>
#include <cmath>
#include <algorithm>
#include <cstdio>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "css/chance.hpp"
#include "css/linalg.hpp"
#include "css/compiler.hpp"
#include "css/geometry.hpp"
#include "css/rng.hpp"
#include "css/scenario.hpp"
#include "css/simulate.hpp"
#include "css/solvers.hpp"
#include "css/systems.hpp"
#include "support/oracles.hpp"

namespace chance = css::chance;
namespace cli = css::cli;
namespace comp = css::compiler;
namespace geo = css::geometry;
namespace sim = css::simulate;
namespace sol = css::solvers;
namespace sys = css::systems;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixture(const char* name) {
  return std::string(CSS_SCENARIO_DIR) + "/" + name;
}

/// Criteria 5/6/9/12/13 share the synthesized equilibrium controller;
/// criterion 7 shares the path controller.
struct Shared {
  std::optional<cli::Scenario> equilibrium_scenario;
  std::optional<cli::SynthesisOutput> equilibrium;
  std::optional<cli::Scenario> path_scenario;
  std::optional<cli::SynthesisOutput> path;

  cli::SynthesisOutput& equilibrium_synthesis() {
    if (!equilibrium) {
      equilibrium_scenario = cli::load_scenario(fixture("equilibrium_pentagon.json"));
      equilibrium = cli::run_synthesis(*equilibrium_scenario);
    }
    return *equilibrium;
  }
  cli::SynthesisOutput& path_synthesis() {
    if (!path) {
      path_scenario = cli::load_scenario(fixture("path_ring.json"));
      path = cli::run_synthesis(*path_scenario);
    }
    return *path;
  }
};

Shared shared;

char buffer[256];

Outcome chebyshev_soundness_sweep() {
  css::Rng rng(20260808);
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Sample instances until one is certified, then test it empirically.
    for (;;) {
      const int dim = 1 + static_cast<int>(rng.next_u64() % 3);
      chance::AffineRandomScalar f;
      Eigen::VectorXd x(dim);
      f.b.resize(dim);
      for (int i = 0; i < dim; ++i) {
        f.b[i] = rng.normal();
        x[i] = rng.normal();
      }
      Eigen::MatrixXd l(dim, dim);
      for (int i = 0; i < dim * dim; ++i) l(i / dim, i % dim) = 0.4 * rng.normal();
      const chance::NoiseModel sigma(l * l.transpose());
      const double t = 0.1 * std::pow(100.0, rng.uniform());
      const double eta = 0.01 + 0.98 * rng.uniform();
      f.c = -f.b.dot(x) - t - rng.uniform() * t * std::sqrt(eta);
      if (chance::relax_chance_ge(f, x, sigma, t, eta) > 0.0) continue;
      const auto mc = chance::monte_carlo_probability(
          f, x, sigma, 100000, 555 + static_cast<std::uint64_t>(trial));
      if (mc.estimate > eta + 3.0 * mc.wilson_halfwidth) ++violations;
      break;
    }
  }
  std::snprintf(buffer, sizeof(buffer), "%d/100 certified instances violated the budget",
                violations);
  return {violations == 0, buffer};
}

Outcome vertex_trick_oracle() {
  css::Rng rng(42);
  int failures = 0;
  double worst_excess = -1e300;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    oracles::random_polygon(rng, a, b);
    const geo::Polytope polygon = geo::Polytope::from_halfspaces(a, b);

    Eigen::Matrix2d l;
    l << rng.normal(), 0.0, rng.normal(), rng.normal();
    const Eigen::Matrix2d q = l * l.transpose();  // PSD quadratic
    Eigen::Vector2d lin(rng.normal(), rng.normal());
    auto value = [&](const Eigen::Vector2d& p) { return p.dot(q * p) + lin.dot(p); };

    double vertex_max = -1e300;
    for (const auto& v : polygon.vertices()) vertex_max = std::max(vertex_max, value(v));

    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
    polygon.bounding_box(lo, hi);
    double grid_max = -1e300;
    for (int gx = 0; gx < 200; ++gx) {
      for (int gy = 0; gy < 200; ++gy) {
        Eigen::Vector2d p(lo[0] + (hi[0] - lo[0]) * gx / 199.0,
                          lo[1] + (hi[1] - lo[1]) * gy / 199.0);
        if (!polygon.contains(p, 0.0)) continue;
        grid_max = std::max(grid_max, value(p));
      }
    }
    worst_excess = std::max(worst_excess, grid_max - vertex_max);
    if (grid_max > vertex_max + 1e-9) ++failures;
  }
  std::snprintf(buffer, sizeof(buffer), "%d/50 polygons failed; worst grid excess %.3e",
                failures, worst_excess);
  return {failures == 0, buffer};
}

Outcome vertex_enumeration_oracle() {
  css::Rng rng(7);
  int failures = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::MatrixXd a;
    Eigen::VectorXd b;
    if (trial % 2 == 0) {
      oracles::random_polygon(rng, a, b);
    } else {
      oracles::random_polytope_3d(rng, a, b);
    }
    const geo::Polytope p = geo::Polytope::from_halfspaces(a, b);
    if (!oracles::same_point_set(p.vertices(), oracles::brute_force_vertices(a, b))) ++failures;
  }
  std::snprintf(buffer, sizeof(buffer), "%d/50 polytopes disagreed with brute force", failures);
  return {failures == 0, buffer};
}

Outcome relative_degree_two() {
  const cli::Scenario scenario = cli::load_scenario(fixture("equilibrium_pentagon.json"));
  const sys::LinearSystem di = sys::double_integrator_2d();
  const geo::Polytope polygon =
      geo::Polytope::from_halfspaces(scenario.polygon_normals, scenario.polygon_offsets);
  const sys::LiftedCell lifted = sys::lift_position_constraints(polygon, scenario.vbound);
  int bad = 0;
  for (Eigen::Index face : lifted.position_faces) {
    const Eigen::RowVectorXd row = -lifted.cell.face_normals().row(face);
    if (sys::relative_degree(di, row) != 2) ++bad;
  }
  std::snprintf(buffer, sizeof(buffer), "%zu position faces checked, %d off r=2",
                lifted.position_faces.size(), bad);
  return {bad == 0, buffer};
}

Outcome equilibrium_sigma0() {
  const auto start = std::chrono::steady_clock::now();
  cli::SynthesisOutput& synthesis = shared.equilibrium_synthesis();
  if (synthesis.result.status != sol::SolveStatus::optimal) {
    return {false, "synthesis did not return optimal"};
  }
  const cli::Scenario& scenario = *shared.equilibrium_scenario;
  const cli::ScenarioModel& sm = synthesis.scenario_model;
  sim::SimConfig cfg = scenario.sim;
  cfg.sigma_scale = 0.0;
  const sim::Trajectory traj = sim::rollout(scenario.system, synthesis.result.k, sm.x0, sm.cell,
                                            scenario.noise, cfg, sm.x_e);
  const Eigen::VectorXd& last = traj.states.back();
  const double final_error = std::hypot(last[0] - sm.x_e[0], last[2] - sm.x_e[2]);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::snprintf(buffer, sizeof(buffer),
                "%zu violation events, final position error %.2e, %.1f s (budget 60 s)",
                traj.violation_events.size(), final_error, seconds);
  return {traj.violation_events.empty() && final_error <= 0.05 && seconds < 60.0, buffer};
}

Outcome noise_ordering() {
  cli::SynthesisOutput& synthesis = shared.equilibrium_synthesis();
  const cli::Scenario& scenario = *shared.equilibrium_scenario;
  const cli::ScenarioModel& sm = synthesis.scenario_model;
  auto fraction_at = [&](double sigma) {
    sim::SimConfig cfg = scenario.sim;
    cfg.sigma_scale = sigma;
    cfg.runs = 50;
    const auto batch = sim::rollout_batch(scenario.system, synthesis.result.k, sm.x0, sm.cell,
                                          scenario.noise, cfg, sm.x_e);
    return sim::violation_stats(batch, sm.cell.num_faces()).violation_run_fraction;
  };
  const double small_noise = fraction_at(0.1);
  const double large_noise = fraction_at(1.0);
  std::snprintf(buffer, sizeof(buffer),
                "violation fraction %.2f at sigma 0.1 vs %.2f at sigma 1 over 50 shared seeds",
                small_noise, large_noise);
  return {small_noise < large_noise, buffer};
}

Outcome path_sigma0() {
  cli::SynthesisOutput& synthesis = shared.path_synthesis();
  if (synthesis.result.status != sol::SolveStatus::optimal) {
    return {false, "synthesis did not return optimal"};
  }
  const cli::Scenario& scenario = *shared.path_scenario;
  const cli::ScenarioModel& sm = synthesis.scenario_model;
  sim::SimConfig cfg = scenario.sim;
  cfg.sigma_scale = 0.0;
  cfg.runs = 5;
  const auto batch = sim::rollout_batch(scenario.system, synthesis.result.k, sm.x0, sm.cell,
                                        scenario.noise, cfg, sm.x_e, sm.exit_cell_face);
  std::size_t exits = 0;
  std::size_t violations = 0;
  bool monotone = true;
  const Eigen::RowVectorXd row = sm.cell.face_normals().row(*sm.exit_cell_face);
  const double norm = row.norm();
  const double offset = sm.cell.face_offsets()[*sm.exit_cell_face] / norm;
  for (const auto& traj : batch) {
    exits += traj.exit_event.has_value();
    violations += traj.violation_events.size();
    double previous = std::numeric_limits<double>::infinity();
    for (const auto& state : traj.states) {
      const double v = offset - row.dot(state) / norm;
      if (v >= previous + 1e-12) {
        monotone = false;
        break;
      }
      previous = v;
    }
  }
  std::snprintf(buffer, sizeof(buffer),
                "%zu/%zu runs exited, %zu violations of remaining faces, V monotone: %s",
                exits, batch.size(), violations, monotone ? "yes" : "no");
  return {exits == batch.size() && violations == 0 && monotone, buffer};
}

Outcome lyapunov_certificate() {
  cli::SynthesisOutput& synthesis = shared.equilibrium_synthesis();
  const cli::Scenario& scenario = *shared.equilibrium_scenario;
  const Eigen::MatrixXd& p = *synthesis.result.p;
  const double symmetry = (p - p.transpose()).lpNorm<Eigen::Infinity>();
  const double min_eig = css::min_eigenvalue(p);
  const double max_eig =
      sol::verify_lyapunov(p, scenario.system.a, scenario.system.b, synthesis.result.k,
                           scenario.params.beta_v);
  std::snprintf(buffer, sizeof(buffer),
                "closed-loop max eig %.3e, min eig of P %.3e, asymmetry %.1e", max_eig, min_eig,
                symmetry);
  return {max_eig < 0.0 && min_eig > 0.0 && symmetry <= 1e-10, buffer};
}

Outcome lyapunov_decrease_along_rollout() {
  cli::SynthesisOutput& synthesis = shared.equilibrium_synthesis();
  const cli::Scenario& scenario = *shared.equilibrium_scenario;
  const cli::ScenarioModel& sm = synthesis.scenario_model;
  sim::SimConfig cfg = scenario.sim;
  cfg.sigma_scale = 0.0;
  const sim::Trajectory traj = sim::rollout(scenario.system, synthesis.result.k, sm.x0, sm.cell,
                                            scenario.noise, cfg, sm.x_e);
  const Eigen::MatrixXd& p = *synthesis.result.p;
  double previous = std::numeric_limits<double>::infinity();
  double worst_rise = -1e300;
  for (const auto& state : traj.states) {
    const Eigen::VectorXd d = state - sm.x_e;
    const double v = d.dot(p * d);
    worst_rise = std::max(worst_rise, v - previous);
    previous = v;
  }
  std::snprintf(buffer, sizeof(buffer), "worst step increase of V: %.3e (tolerance 1e-9)",
                worst_rise);
  return {worst_rise <= 1e-9, buffer};
}

Outcome solver_fixtures() {
  const sol::SolverConfig cfg{};
  bool pass = true;
  double worst_error = 0.0;
  double worst_kkt = 0.0;

  {  // minimize k^2 s.t. (k-2)^2 <= 1
    comp::QcqpProblem p;
    p.layout.extra_count = 1;
    comp::SquaredAffineConstraint c;
    comp::AffineForm square;
    square.coeffs = Eigen::VectorXd::Ones(1);
    square.offset = -2.0;
    c.squares.push_back(square);
    c.linear.coeffs = Eigen::VectorXd::Zero(1);
    c.linear.offset = -1.0;
    p.constraints.push_back(c);
    p.objective_quad_diag = Eigen::VectorXd::Ones(1);
    p.objective_linear = Eigen::VectorXd::Zero(1);
    const sol::SynthesisResult r = sol::solve_qcqp(p, cfg);
    pass = pass && r.status == sol::SolveStatus::optimal;
    worst_error = std::max(worst_error, std::abs(r.kappa[0] - 1.0));
    worst_kkt = std::max(worst_kkt, r.kkt_residual);
  }
  {  // minimize ||K||^2 s.t. (k1-1)^2 <= 0.25
    comp::QcqpProblem p;
    p.layout.nu = 1;
    p.layout.nx = 2;
    comp::SquaredAffineConstraint c;
    comp::AffineForm square;
    square.coeffs = Eigen::VectorXd::Zero(2);
    square.coeffs[0] = 1.0;
    square.offset = -1.0;
    c.squares.push_back(square);
    c.linear.coeffs = Eigen::VectorXd::Zero(2);
    c.linear.offset = -0.25;
    p.constraints.push_back(c);
    p.objective_quad_diag = Eigen::VectorXd::Ones(2);
    p.objective_linear = Eigen::VectorXd::Zero(2);
    const sol::SynthesisResult r = sol::solve_qcqp(p, cfg);
    pass = pass && r.status == sol::SolveStatus::optimal;
    worst_error = std::max(
        worst_error, std::max(std::abs(r.k(0, 0) - 0.5), std::abs(r.k(0, 1))));
    worst_kkt = std::max(worst_kkt, r.kkt_residual);
  }
  {  // planted ball
    css::Rng rng(99);
    const Eigen::Vector2d center(2.5 * rng.normal() + 3.0, 2.5 * rng.normal() - 2.0);
    const double radius = 0.4 + 0.4 * rng.uniform();
    comp::QcqpProblem p;
    p.layout.extra_count = 2;
    comp::SquaredAffineConstraint c;
    for (int i = 0; i < 2; ++i) {
      comp::AffineForm square;
      square.coeffs = Eigen::VectorXd::Zero(2);
      square.coeffs[i] = 1.0;
      square.offset = -center[i];
      c.squares.push_back(square);
    }
    c.linear.coeffs = Eigen::VectorXd::Zero(2);
    c.linear.offset = -radius * radius;
    p.constraints.push_back(c);
    p.objective_quad_diag = Eigen::VectorXd::Ones(2);
    p.objective_linear = Eigen::VectorXd::Zero(2);
    const sol::SynthesisResult r = sol::solve_qcqp(p, cfg);
    pass = pass && r.status == sol::SolveStatus::optimal;
    const Eigen::Vector2d expected = center * (1.0 - radius / center.norm());
    worst_error = std::max(worst_error, (Eigen::Vector2d(r.kappa) - expected).norm());
    worst_kkt = std::max(worst_kkt, r.kkt_residual);
  }
  std::snprintf(buffer, sizeof(buffer), "worst recovery error %.2e (tol 1e-6), worst KKT %.2e (tol 1e-7)",
                worst_error, worst_kkt);
  return {pass && worst_error <= 1e-6 && worst_kkt <= 1e-7, buffer};
}

Outcome eta_properties() {
  const cli::Scenario scenario = cli::load_scenario(fixture("equilibrium_pentagon.json"));
  const geo::Polytope polygon =
      geo::Polytope::from_halfspaces(scenario.polygon_normals, scenario.polygon_offsets);
  const geo::RiskBudget budget = geo::risk_budget_for(polygon);
  const geo::FaceDistance fd(polygon);

  int boundary_bad = 0;
  // On-face points: project interior samples onto each face.
  const auto face_points = geo::sample_interior(polygon, 100, 31);
  for (const auto& x : face_points) {
    for (Eigen::Index face = 0; face < polygon.num_faces(); ++face) {
      const Eigen::VectorXd on_face =
          x + fd.face(face, x) * fd.scaled_normals().row(face).transpose();
      if (std::abs(budget(on_face, face)) > 1e-9) ++boundary_bad;
    }
  }

  int range_bad = 0;
  const auto interior = geo::sample_interior(polygon, 1000, 32);
  for (const auto& x : interior) {
    for (Eigen::Index face = 0; face < polygon.num_faces(); ++face) {
      const double eta = budget(x, face);
      if (!(eta > 0.0 && eta <= 1.0)) ++range_bad;
    }
  }

  int concavity_bad = 0;
  const auto segment_points = geo::sample_interior(polygon, 2000, 33);
  for (std::size_t i = 0; i + 1 < segment_points.size(); i += 2) {
    const Eigen::VectorXd mid = 0.5 * (segment_points[i] + segment_points[i + 1]);
    for (Eigen::Index face = 0; face < polygon.num_faces(); ++face) {
      const double lhs = budget(mid, face);
      const double rhs =
          0.5 * (budget(segment_points[i], face) + budget(segment_points[i + 1], face));
      if (lhs < rhs - 1e-12) ++concavity_bad;
    }
  }
  std::snprintf(buffer, sizeof(buffer),
                "boundary failures %d, range failures %d (1000 samples), concavity failures %d "
                "(1000 segments)",
                boundary_bad, range_bad, concavity_bad);
  return {boundary_bad == 0 && range_bad == 0 && concavity_bad == 0, buffer};
}

Outcome infeasibility_reproduction() {
  cli::Scenario strict = cli::load_scenario(fixture("equilibrium_pentagon.json"));
  strict.params.slack = false;
  const cli::SynthesisOutput strict_run = cli::run_synthesis(strict);
  const bool strict_infeasible = strict_run.result.status == sol::SolveStatus::infeasible;

  cli::SynthesisOutput& slack_run = shared.equilibrium_synthesis();
  const bool slack_optimal = slack_run.result.status == sol::SolveStatus::optimal;
  int positive_slacks = 0;
  for (Eigen::Index i = 0; i < slack_run.result.slacks.size(); ++i) {
    if (slack_run.result.slacks[i] > 1e-6) ++positive_slacks;
  }
  std::snprintf(buffer, sizeof(buffer),
                "slack-free status %s; slack run status %s with %d positive slacks",
                sol::to_string(strict_run.result.status),
                sol::to_string(slack_run.result.status), positive_slacks);
  return {strict_infeasible && slack_optimal && positive_slacks >= 1, buffer};
}

Outcome invariant_set_quality() {
  cli::SynthesisOutput& synthesis = shared.equilibrium_synthesis();
  const cli::Scenario& scenario = *shared.equilibrium_scenario;
  const cli::ScenarioModel& sm = synthesis.scenario_model;
  const geo::Polytope polygon =
      geo::Polytope::from_halfspaces(scenario.polygon_normals, scenario.polygon_offsets);
  const sim::InvariantSetEstimate estimate = sim::invariant_set_estimate(
      scenario.system, synthesis.result.k, polygon, sm.cell, sm.x_e, 100, scenario.sim);

  double diameter = 0.0;
  for (const auto& a : polygon.vertices()) {
    for (const auto& b : polygon.vertices()) diameter = std::max(diameter, (a - b).norm());
  }
  const double corner_radius = 0.2 * diameter;

  int members_outside_polygon = 0;
  int uncovered = 0;
  int uncovered_far_from_corners = 0;
  for (Eigen::Index iy = 0; iy < estimate.resolution; ++iy) {
    for (Eigen::Index ix = 0; ix < estimate.resolution; ++ix) {
      const Eigen::Vector2d center = estimate.center(ix, iy);
      const sim::CellClass cell_class = estimate.at(ix, iy);
      if (cell_class == sim::CellClass::member && !polygon.contains(center, 1e-9)) {
        ++members_outside_polygon;
      }
      if (cell_class != sim::CellClass::not_member) continue;
      ++uncovered;
      double nearest_corner = 1e300;
      for (const auto& v : polygon.vertices()) {
        nearest_corner = std::min(nearest_corner, (Eigen::Vector2d(v) - center).norm());
      }
      if (nearest_corner > corner_radius) ++uncovered_far_from_corners;
    }
  }

  // Neighborhood of x_e: the four grid cells around the equilibrium position.
  const Eigen::Vector2d target(sm.x_e[0], sm.x_e[2]);
  int neighborhood_members = 0;
  int neighborhood_cells = 0;
  for (Eigen::Index iy = 0; iy < estimate.resolution; ++iy) {
    for (Eigen::Index ix = 0; ix < estimate.resolution; ++ix) {
      if ((estimate.center(ix, iy) - target).norm() > 0.15) continue;
      ++neighborhood_cells;
      neighborhood_members += estimate.at(ix, iy) == sim::CellClass::member;
    }
  }

  std::snprintf(buffer, sizeof(buffer),
                "covered %.3f; %d members outside polygon; %d/%d uncovered cells beyond corner "
                "disks; x_e neighborhood %d/%d",
                estimate.covered_fraction, members_outside_polygon, uncovered_far_from_corners,
                uncovered, neighborhood_members, neighborhood_cells);
  const bool neighborhood_ok = neighborhood_cells > 0 && neighborhood_members == neighborhood_cells;
  return {members_outside_polygon == 0 && uncovered_far_from_corners == 0 && neighborhood_ok,
          buffer};
}

struct Criterion {
  int number;
  const char* title;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "Chebyshev soundness sweep (100 certified instances, 1e5 samples)", chebyshev_soundness_sweep},
      {2, "vertex trick: grid max below vertex max on 50 random quadratics", vertex_trick_oracle},
      {3, "vertex enumeration equals brute-force oracle on 50 polytopes", vertex_enumeration_oracle},
      {4, "relative degree 2 for every position face", relative_degree_two},
      {5, "equilibrium sigma=0: stays inside, settles at x_e", equilibrium_sigma0},
      {6, "violation fraction ordering: sigma 0.1 < sigma 1", noise_ordering},
      {7, "path sigma=0: exits through the exit face, V decreasing", path_sigma0},
      {8, "Lyapunov certificate: max eig < 0, P symmetric PD", lyapunov_certificate},
      {9, "noiseless Lyapunov decrease along the rollout", lyapunov_decrease_along_rollout},
      {10, "solver fixtures recovered to 1e-6 with KKT <= 1e-7", solver_fixtures},
      {11, "eta boundary/range/concavity properties", eta_properties},
      {12, "infeasible without slacks, optimal with a positive slack", infeasibility_reproduction},
      {13, "invariant set: inside polygon, covers x_e, corners-only gaps", invariant_set_quality},
  };

  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));

  int failures = 0;
  for (const auto& criterion : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), criterion.number) == selected.end()) {
      continue;
    }
    Outcome outcome;
    try {
      outcome = criterion.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] criterion %2d: %s — %s\n", outcome.pass ? "PASS" : "FAIL",
                criterion.number, criterion.title, outcome.detail.c_str());
    std::fflush(stdout);
    failures += !outcome.pass;
  }
  return failures;
}
