#include "css/simulate.hpp"

#include <cmath>
#include <limits>

#include "css/error.hpp"
#include "css/linalg.hpp"
#include "css/parallel.hpp"
#include "css/rng.hpp"

namespace css::simulate {

Trajectory rollout(const systems::LinearSystem& sys, const Eigen::MatrixXd& k,
                   const Eigen::VectorXd& x0, const geometry::Polytope& cell,
                   const chance::NoiseModel& noise, const SimConfig& cfg,
                   const Eigen::VectorXd& x_ref, std::optional<Eigen::Index> exit_face) {
  if (k.rows() != sys.nu() || k.cols() != sys.nx() || x0.size() != sys.nx() ||
      x_ref.size() != sys.nx() || cell.dim() != sys.nx()) {
    throw Error(ErrorCode::dimension_mismatch, "rollout shapes disagree");
  }
  if (!(cfg.dt > 0.0) || cfg.horizon < cfg.dt) {
    throw Error(ErrorCode::invalid_argument, "need dt > 0 and horizon >= dt");
  }
  if (!cell.contains(x0, 1e-9)) {
    throw Error(ErrorCode::negative_distance, "initial state outside the cell");
  }

  const geometry::FaceDistance distances(cell);
  const Eigen::Index n_theta = sys.nx();
  const bool noisy = cfg.sigma_scale != 0.0;
  Eigen::MatrixXd fixed_root;
  if (noisy && noise.is_constant()) fixed_root = psd_sqrt(noise.covariance(x0));

  Rng rng(derive_seed(cfg.seed, 0x5e0));
  const auto steps = static_cast<std::size_t>(std::llround(cfg.horizon / cfg.dt));

  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.inputs.reserve(steps);
  traj.times.push_back(0.0);
  traj.states.push_back(x0);

  Eigen::VectorXd x = x0;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n_theta);
  for (std::size_t step = 0; step < steps; ++step) {
    if (noisy) {
      Eigen::VectorXd z(n_theta);
      for (Eigen::Index i = 0; i < n_theta; ++i) z[i] = rng.normal();
      const Eigen::MatrixXd& root =
          noise.is_constant() ? fixed_root : (fixed_root = psd_sqrt(noise.covariance(x)));
      theta = cfg.sigma_scale * (root * z);
    }
    const Eigen::VectorXd u = k * (x - x_ref + theta);
    x = x + cfg.dt * (sys.a * x + sys.b * u);
    if (!all_finite(x)) {
      throw Error(ErrorCode::non_finite, "state diverged at t=" + std::to_string(traj.times.back()));
    }
    const double t = static_cast<double>(step + 1) * cfg.dt;
    traj.inputs.push_back(u);
    traj.times.push_back(t);
    traj.states.push_back(x);

    const Eigen::VectorXd d = distances(x);
    if (exit_face && d[*exit_face] <= 0.0) {
      traj.exit_event = ExitEvent{*exit_face, t};
      break;
    }
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (exit_face && i == *exit_face) continue;
      if (d[i] < 0.0) traj.violation_events.push_back(ViolationEvent{i, t});
    }
  }
  return traj;
}

std::vector<Trajectory> rollout_batch(const systems::LinearSystem& sys, const Eigen::MatrixXd& k,
                                      const Eigen::VectorXd& x0, const geometry::Polytope& cell,
                                      const chance::NoiseModel& noise, const SimConfig& cfg,
                                      const Eigen::VectorXd& x_ref,
                                      std::optional<Eigen::Index> exit_face) {
  std::vector<Trajectory> out(cfg.runs);
  parallel_for(cfg.runs, [&](std::size_t run) {
    SimConfig run_cfg = cfg;
    run_cfg.seed = cfg.seed + run;
    out[run] = rollout(sys, k, x0, cell, noise, run_cfg, x_ref, exit_face);
  });
  return out;
}

ViolationStats violation_stats(const std::vector<Trajectory>& trajectories,
                               Eigen::Index num_faces) {
  if (trajectories.empty()) {
    throw Error(ErrorCode::invalid_argument, "no trajectories");
  }
  ViolationStats stats;
  stats.per_face_counts.assign(static_cast<std::size_t>(num_faces), 0);
  std::size_t violating_runs = 0;
  std::size_t exited = 0;
  double exit_time_sum = 0.0;
  for (const auto& traj : trajectories) {
    if (!traj.violation_events.empty()) ++violating_runs;
    for (const auto& event : traj.violation_events) {
      ++stats.per_face_counts[static_cast<std::size_t>(event.face)];
    }
    if (traj.exit_event) {
      ++exited;
      exit_time_sum += traj.exit_event->time;
    }
  }
  stats.violation_run_fraction =
      static_cast<double>(violating_runs) / static_cast<double>(trajectories.size());
  stats.mean_exit_time = (exited == trajectories.size())
                             ? exit_time_sum / static_cast<double>(exited)
                             : std::numeric_limits<double>::infinity();
  return stats;
}

Eigen::Vector2d InvariantSetEstimate::center(Eigen::Index ix, Eigen::Index iy) const {
  const double fx = (static_cast<double>(ix) + 0.5) / static_cast<double>(resolution);
  const double fy = (static_cast<double>(iy) + 0.5) / static_cast<double>(resolution);
  return {lo[0] + fx * (hi[0] - lo[0]), lo[1] + fy * (hi[1] - lo[1])};
}

InvariantSetEstimate invariant_set_estimate(const systems::LinearSystem& sys,
                                            const Eigen::MatrixXd& k,
                                            const geometry::Polytope& polygon,
                                            const geometry::Polytope& cell,
                                            const Eigen::VectorXd& x_e,
                                            Eigen::Index grid_resolution, const SimConfig& cfg,
                                            double settle_tol) {
  if (sys.nx() != 4 || polygon.dim() != 2 || cell.dim() != 4 || x_e.size() != 4) {
    throw Error(ErrorCode::dimension_mismatch,
                "invariant set estimate expects the 4-state double-integrator layout");
  }
  InvariantSetEstimate out;
  out.resolution = grid_resolution;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  polygon.bounding_box(lo, hi);
  out.lo = lo;
  out.hi = hi;
  out.cells.assign(static_cast<std::size_t>(grid_resolution * grid_resolution),
                   CellClass::outside_polygon);

  SimConfig noiseless = cfg;
  noiseless.sigma_scale = 0.0;
  noiseless.runs = 1;
  const chance::NoiseModel no_noise{Eigen::MatrixXd::Zero(4, 4)};
  const Eigen::Vector2d target(x_e[0], x_e[2]);

  parallel_for(static_cast<std::size_t>(grid_resolution), [&](std::size_t row) {
    const auto iy = static_cast<Eigen::Index>(row);
    for (Eigen::Index ix = 0; ix < grid_resolution; ++ix) {
      const Eigen::Vector2d pos = out.center(ix, iy);
      if (!polygon.contains(pos, 0.0)) continue;
      auto& slot = out.cells[static_cast<std::size_t>(iy * grid_resolution + ix)];
      slot = CellClass::not_member;
      Eigen::VectorXd x0(4);
      x0 << pos[0], 0.0, pos[1], 0.0;
      if (!cell.contains(x0, 0.0)) continue;
      Trajectory traj;
      try {
        traj = rollout(sys, k, x0, cell, no_noise, noiseless, x_e);
      } catch (const Error&) {
        continue;  // diverged: not a member
      }
      if (!traj.violation_events.empty()) continue;
      const Eigen::VectorXd& last = traj.states.back();
      const Eigen::Vector2d final_pos(last[0], last[2]);
      if ((final_pos - target).norm() <= settle_tol) slot = CellClass::member;
    }
  });

  std::size_t inside = 0;
  std::size_t members = 0;
  for (const CellClass c : out.cells) {
    if (c != CellClass::outside_polygon) ++inside;
    if (c == CellClass::member) ++members;
  }
  out.covered_fraction = inside == 0 ? 0.0 : static_cast<double>(members) / static_cast<double>(inside);
  return out;
}

ChanceFieldReport verify_chance_field(const compiler::SynthesisModel& model,
                                      const Eigen::MatrixXd& k,
                                      const std::vector<Eigen::VectorXd>& sample_points,
                                      std::uint64_t samples_per_point, std::uint64_t seed) {
  const int r = compiler::shared_relative_degree(model);
  const auto& cell = model.cell;

  struct Family {
    std::string name;
    Eigen::Index index;
    Eigen::RowVectorXd drift;   // state coefficient of the violation event
    Eigen::RowVectorXd input_k; // row combining with K: event uses (input K)(x + theta)
    double constant;
    bool state_budget;          // eta from the face risk budget
    Eigen::Index budget_face;
  };
  std::vector<Family> families;

  // CBF face i: violation -psi >= 0 with psi = (drift + M K)x + M K theta + alpha_c.
  for (Eigen::Index face : model.cbf_faces) {
    if (model.exit_cell_face && face == *model.exit_cell_face) continue;
    systems::BarrierFace barrier;
    barrier.row = -cell.face_normals().row(face);
    barrier.offset = cell.face_offsets()[face];
    barrier.alpha = model.alpha;
    const systems::LieCoefficients lie = systems::cbf_coefficients(model.sys, barrier, r);
    families.push_back(Family{"cbf", face, -lie.drift, -lie.input,
                              -model.alpha[0] * barrier.offset, true, face});
  }
  if (model.task == compiler::Task::path && model.exit) {
    const systems::LieCoefficients lie =
        systems::clf_path_coefficients(model.sys, *model.exit, r);
    families.push_back(Family{"cclf", 0, lie.drift, lie.input,
                              model.exit->beta[0] * model.exit->offset, false, 0});
  }
  for (Eigen::Index j = 0; j < model.actuator_normals.rows(); ++j) {
    families.push_back(Family{"cact", j, Eigen::RowVectorXd::Zero(model.sys.nx()),
                              model.actuator_normals.row(j), -model.actuator_offsets[j], false,
                              0});
  }

  const bool equilibrium_clf = model.task == compiler::Task::equilibrium && model.lyapunov_p;

  ChanceFieldReport report;
  std::vector<std::vector<ChanceFieldEntry>> buckets(sample_points.size());
  parallel_for(sample_points.size(), [&](std::size_t pi) {
    const Eigen::VectorXd& x = sample_points[pi];
    std::uint64_t stream = 0;
    for (const auto& family : families) {
      // f = b'(x + theta) + c reproduces drift*x + (input K)(x + theta) + const.
      chance::AffineRandomScalar f;
      const Eigen::RowVectorXd input_k = family.input_k * k;
      f.b = input_k.transpose();
      f.c = family.drift.dot(x) + family.constant;
      const double eta = family.state_budget ? model.budget(x, family.budget_face)
                         : (family.name == "cclf" ? model.options.eta_v : model.options.eta_u);
      const auto mc = chance::monte_carlo_probability(
          f, x, model.sigma, samples_per_point, derive_seed(seed, pi * 131 + stream++));
      ChanceFieldEntry entry{family.name, family.index, x, mc.estimate, eta,
                             mc.wilson_halfwidth,
                             mc.estimate > eta + 3.0 * mc.wilson_halfwidth};
      buckets[pi].push_back(std::move(entry));
    }
    if (equilibrium_clf) {
      // f = -x'Qx + 2 x'PBK theta with Q = -[(A+BK)'P + P(A+BK) + beta P].
      const Eigen::MatrixXd& p = *model.lyapunov_p;
      const Eigen::MatrixXd closed = model.sys.a + model.sys.b * k;
      const Eigen::MatrixXd q =
          -(closed.transpose() * p + p * closed + model.beta_v0 * p);
      chance::AffineRandomScalar f;
      f.b = 2.0 * k.transpose() * model.sys.b.transpose() * p * x;
      f.c = -x.dot(q * x) - f.b.dot(x);
      const auto mc = chance::monte_carlo_probability(
          f, x, model.sigma, samples_per_point, derive_seed(seed, pi * 131 + stream++));
      ChanceFieldEntry entry{"cclf", 0, x, mc.estimate, model.options.eta_v,
                             mc.wilson_halfwidth,
                             mc.estimate > model.options.eta_v + 3.0 * mc.wilson_halfwidth};
      buckets[pi].push_back(std::move(entry));
    }
  });

  for (auto& bucket : buckets) {
    for (auto& entry : bucket) {
      if (entry.flagged) ++report.flagged_count;
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

}  // namespace css::simulate
