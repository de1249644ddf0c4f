#include <doctest.h>

#include <cmath>

#include "css/chance.hpp"
#include "css/error.hpp"
#include "css/simulate.hpp"
#include "css/solvers.hpp"
#include "css/systems.hpp"

using css::Error;
using css::ErrorCode;
namespace geo = css::geometry;
namespace sys = css::systems;
namespace sim = css::simulate;
namespace chance = css::chance;

namespace {

geo::Polytope unit_square() {
  Eigen::MatrixXd a(4, 2);
  a << 1, 0, -1, 0, 0, 1, 0, -1;
  return geo::Polytope::from_halfspaces(a, Eigen::VectorXd::Ones(4));
}

geo::Polytope square_cell_4d(double half_width, double vbound) {
  Eigen::MatrixXd a(4, 2);
  a << 1, 0, -1, 0, 0, 1, 0, -1;
  const geo::Polytope polygon =
      geo::Polytope::from_halfspaces(a, Eigen::VectorXd::Constant(4, half_width));
  return sys::lift_position_constraints(polygon, vbound).cell;
}

Eigen::MatrixXd pd_gains() {
  Eigen::MatrixXd k(2, 4);
  k << -2, -3, 0, 0, 0, 0, -2, -3;
  return k;
}

}  // namespace

TEST_CASE("open loop with zero velocity stays put") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const geo::Polytope cell = square_cell_4d(1.0, 1.0);
  Eigen::VectorXd x0(4);
  x0 << 0.5, 0.0, -0.25, 0.0;
  sim::SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 1.0;
  cfg.sigma_scale = 0.0;
  const chance::NoiseModel noise{Eigen::MatrixXd::Identity(4, 4)};
  const sim::Trajectory traj = sim::rollout(s, Eigen::MatrixXd::Zero(2, 4), x0, cell, noise,
                                            cfg, Eigen::VectorXd::Zero(4));
  for (const auto& state : traj.states) {
    CHECK((state - x0).lpNorm<Eigen::Infinity>() == 0.0);
  }
  CHECK(traj.violation_events.empty());
}

TEST_CASE("euler error halves with the step") {
  // 1-D closed loop xdot = -x realized as A = 0, B = 1, K = -1.
  sys::LinearSystem s;
  s.a = Eigen::MatrixXd::Zero(1, 1);
  s.b = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd k = -Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd cell_a(2, 1);
  cell_a << 1, -1;
  const geo::Polytope cell =
      geo::Polytope::from_halfspaces(cell_a, Eigen::VectorXd::Constant(2, 2.0));
  Eigen::VectorXd x0 = Eigen::VectorXd::Ones(1);
  const chance::NoiseModel none{Eigen::MatrixXd::Zero(1, 1)};

  auto endpoint = [&](double dt) {
    sim::SimConfig cfg;
    cfg.dt = dt;
    cfg.horizon = 1.0;
    cfg.sigma_scale = 0.0;
    return sim::rollout(s, k, x0, cell, none, cfg, Eigen::VectorXd::Zero(1)).states.back()[0];
  };

  const double exact = std::exp(-1.0);
  const double err_coarse = std::abs(endpoint(0.01) - exact);
  const double err_fine = std::abs(endpoint(0.005) - exact);
  CHECK(err_coarse / err_fine >= 1.5);
  CHECK(err_coarse / err_fine <= 2.5);
}

TEST_CASE("rollouts are bitwise deterministic per seed") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const geo::Polytope cell = square_cell_4d(2.0, 2.0);
  Eigen::VectorXd x0(4);
  x0 << 0.5, 0.0, 0.5, 0.0;
  sim::SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 2.0;
  cfg.sigma_scale = 0.5;
  cfg.seed = 321;
  const chance::NoiseModel noise{0.01 * Eigen::MatrixXd::Identity(4, 4)};
  const sim::Trajectory a =
      sim::rollout(s, pd_gains(), x0, cell, noise, cfg, Eigen::VectorXd::Zero(4));
  const sim::Trajectory b =
      sim::rollout(s, pd_gains(), x0, cell, noise, cfg, Eigen::VectorXd::Zero(4));
  REQUIRE(a.states.size() == b.states.size());
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    CHECK(a.states[i] == b.states[i]);
  }
  cfg.seed = 322;
  const sim::Trajectory c =
      sim::rollout(s, pd_gains(), x0, cell, noise, cfg, Eigen::VectorXd::Zero(4));
  CHECK(a.states.back() != c.states.back());
}

TEST_CASE("diverging state raises non_finite") {
  sys::LinearSystem s;
  s.a = Eigen::MatrixXd::Ones(1, 1) * 5.0;
  s.b = Eigen::MatrixXd::Ones(1, 1);
  Eigen::MatrixXd k = Eigen::MatrixXd::Ones(1, 1) * 1e4;  // positive feedback
  Eigen::MatrixXd cell_a(2, 1);
  cell_a << 1, -1;
  const geo::Polytope cell =
      geo::Polytope::from_halfspaces(cell_a, Eigen::VectorXd::Constant(2, 1e9));
  sim::SimConfig cfg;
  cfg.dt = 0.5;
  cfg.horizon = 500.0;
  cfg.sigma_scale = 0.0;
  const chance::NoiseModel none{Eigen::MatrixXd::Zero(1, 1)};
  try {
    sim::rollout(s, k, Eigen::VectorXd::Ones(1), cell, none, cfg, Eigen::VectorXd::Zero(1));
    FAIL("expected non_finite");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_finite);
  }
}

TEST_CASE("violation accounting") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const geo::Polytope cell = square_cell_4d(0.3, 2.0);
  Eigen::VectorXd x0(4);
  x0 << 0.0, 0.0, 0.0, 0.0;
  sim::SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 3.0;
  cfg.sigma_scale = 3.0;  // strong noise on a tiny cell: violations certain
  cfg.seed = 5;
  cfg.runs = 4;
  const chance::NoiseModel noise{Eigen::MatrixXd::Identity(4, 4)};
  const auto batch =
      sim::rollout_batch(s, pd_gains(), x0, cell, noise, cfg, Eigen::VectorXd::Zero(4));
  const sim::ViolationStats stats = sim::violation_stats(batch, cell.num_faces());
  CHECK(stats.violation_run_fraction > 0.0);
  long total = 0;
  for (long c : stats.per_face_counts) total += c;
  std::size_t events = 0;
  for (const auto& traj : batch) events += traj.violation_events.size();
  CHECK(total == static_cast<long>(events));
  CHECK(std::isinf(stats.mean_exit_time));  // no exit face: nobody exits

  // All-clean runs give fraction zero.
  cfg.sigma_scale = 0.0;
  cfg.runs = 3;
  const auto clean =
      sim::rollout_batch(s, pd_gains(), x0, cell, noise, cfg, Eigen::VectorXd::Zero(4));
  CHECK(sim::violation_stats(clean, cell.num_faces()).violation_run_fraction == 0.0);
}

TEST_CASE("exit through the designated face ends the run") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const geo::Polytope cell = square_cell_4d(1.0, 1.0);
  // Face 0 is x <= 1; drift through it with constant velocity.
  Eigen::VectorXd x0(4);
  x0 << -0.5, 0.5, 0.0, 0.0;
  sim::SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 10.0;
  cfg.sigma_scale = 0.0;
  const chance::NoiseModel none{Eigen::MatrixXd::Zero(4, 4)};
  const sim::Trajectory traj = sim::rollout(s, Eigen::MatrixXd::Zero(2, 4), x0, cell, none,
                                            cfg, Eigen::VectorXd::Zero(4), 0);
  REQUIRE(traj.exit_event.has_value());
  CHECK(traj.exit_event->face == 0);
  CHECK(traj.exit_event->time == doctest::Approx(3.0).epsilon(0.02));
  CHECK(traj.violation_events.empty());
  CHECK(traj.states.size() < 500);  // truncated at the exit

  // V = z'x + b_z with z the inward exit normal strictly decreases.
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& state : traj.states) {
    const double v = 1.0 - state[0];
    CHECK(v < previous);
    previous = v;
  }

  const sim::ViolationStats stats = sim::violation_stats({traj}, cell.num_faces());
  CHECK(std::isfinite(stats.mean_exit_time));
}

TEST_CASE("lyapunov decrease along the noiseless closed loop") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const css::solvers::LyapunovSearch search =
      css::solvers::find_p(s, 1.0, css::solvers::SolverConfig{});
  const geo::Polytope cell = square_cell_4d(2.0, 4.0);
  Eigen::VectorXd x0(4);
  x0 << 1.0, 0.0, -1.5, 0.0;
  sim::SimConfig cfg;
  cfg.dt = 0.005;
  cfg.horizon = 10.0;
  cfg.sigma_scale = 0.0;
  const chance::NoiseModel none{Eigen::MatrixXd::Zero(4, 4)};
  const sim::Trajectory traj =
      sim::rollout(s, search.k_lmi, x0, cell, none, cfg, Eigen::VectorXd::Zero(4));
  double previous = std::numeric_limits<double>::infinity();
  for (const auto& state : traj.states) {
    const double v = state.dot(search.p * state);
    CHECK(v <= previous + 1e-9);
    previous = v;
  }
  const Eigen::VectorXd& last = traj.states.back();
  CHECK(std::hypot(last[0], last[2]) < 0.05);
}

TEST_CASE("invariant set of the zero controller is the settle ball") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const geo::Polytope polygon = unit_square();
  const geo::Polytope cell = square_cell_4d(1.0, 1.0);
  sim::SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 2.0;
  const Eigen::VectorXd x_e = Eigen::VectorXd::Zero(4);
  const sim::InvariantSetEstimate estimate =
      sim::invariant_set_estimate(s, Eigen::MatrixXd::Zero(2, 4), polygon, cell, x_e, 40, cfg);
  // K = 0 from rest never moves: members are exactly the cells within the
  // settle tolerance of the origin.
  for (Eigen::Index iy = 0; iy < estimate.resolution; ++iy) {
    for (Eigen::Index ix = 0; ix < estimate.resolution; ++ix) {
      if (estimate.at(ix, iy) == sim::CellClass::outside_polygon) continue;
      const bool member = estimate.at(ix, iy) == sim::CellClass::member;
      CHECK(member == (estimate.center(ix, iy).norm() <= 0.05));
    }
  }
  CHECK(estimate.covered_fraction > 0.0);
  CHECK(estimate.covered_fraction < 0.05);
}

TEST_CASE("invariant set of a stabilizing controller covers the center") {
  const sys::LinearSystem s = sys::double_integrator_2d();
  const geo::Polytope polygon = unit_square();
  const geo::Polytope cell = square_cell_4d(1.0, 2.0);
  sim::SimConfig cfg;
  cfg.dt = 0.01;
  cfg.horizon = 20.0;
  const Eigen::VectorXd x_e = Eigen::VectorXd::Zero(4);
  const sim::InvariantSetEstimate estimate =
      sim::invariant_set_estimate(s, pd_gains(), polygon, cell, x_e, 30, cfg);
  CHECK(estimate.covered_fraction > 0.5);
  // A neighborhood of the equilibrium is covered.
  const Eigen::Index mid = estimate.resolution / 2;
  CHECK(estimate.at(mid, mid) == sim::CellClass::member);
}

TEST_CASE("wall-vanishing covariance verifies cleanly") {
  // Sigma(x) = d_min(x)^2 * 1e-2 * I dies at the boundary faster than the
  // risk budget, so a gain whose noiseless barrier derivative stays positive
  // passes the field check everywhere.
  css::compiler::SynthesisModel model;
  model.sys = sys::double_integrator_2d();
  model.cell = square_cell_4d(1.0, 1.0);
  model.budget = geo::risk_budget_for(model.cell);
  const sys::LiftedCell lifted = sys::lift_position_constraints(unit_square(), 1.0);
  model.cbf_faces = lifted.position_faces;
  model.alpha = Eigen::VectorXd::Ones(2);
  model.task = css::compiler::Task::path;
  model.actuator_normals = Eigen::MatrixXd::Zero(0, 2);
  model.actuator_offsets = Eigen::VectorXd::Zero(0);
  const geo::FaceDistance distances(model.cell);
  model.sigma = [distances](const Eigen::VectorXd& x) {
    const double d_min = std::max(0.0, distances(x).minCoeff());
    return Eigen::MatrixXd(d_min * d_min * 1e-2 * Eigen::MatrixXd::Identity(4, 4));
  };

  Eigen::MatrixXd k(2, 4);
  k << -1, -1, 0, 0, 0, 0, -1, -1;  // psi = b_i on every position face
  const auto points = geo::sample_interior(model.cell, 50, 21);
  const sim::ChanceFieldReport report = sim::verify_chance_field(model, k, points, 4000, 9);
  CHECK(report.flagged_count == 0);
}

TEST_CASE("chance field flags exactly the noisy regime") {
  // Per-axis u = -(pos + vel) keeps every noiseless barrier derivative at
  // psi = 1 on the unit cell, so the field is clean at sigma = 0; the same
  // gain under unit noise must get flagged near the walls.
  css::compiler::SynthesisModel model;
  model.sys = sys::double_integrator_2d();
  model.cell = square_cell_4d(1.0, 1.0);
  model.budget = geo::risk_budget_for(model.cell);
  const sys::LiftedCell lifted = sys::lift_position_constraints(unit_square(), 1.0);
  model.cbf_faces = lifted.position_faces;
  model.alpha = Eigen::VectorXd::Ones(2);
  model.task = css::compiler::Task::path;  // exercise cbf + cact families only
  model.actuator_normals = Eigen::MatrixXd::Identity(2, 2);
  model.actuator_offsets = Eigen::VectorXd::Constant(2, 10.0);
  model.sigma = [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(4, 4); };

  Eigen::MatrixXd k(2, 4);
  k << -1, -1, 0, 0, 0, 0, -1, -1;

  const auto points = geo::sample_interior(model.cell, 20, 3);
  const sim::ChanceFieldReport clean = sim::verify_chance_field(model, k, points, 2000, 17);
  CHECK(clean.flagged_count == 0);
  CHECK(clean.entries.size() == points.size() * (4 + 2));  // cbf faces + actuator rows

  model.sigma = [](const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(4, 4));
  };
  const sim::ChanceFieldReport noisy = sim::verify_chance_field(model, k, points, 2000, 17);
  CHECK(noisy.flagged_count > 0);
}
