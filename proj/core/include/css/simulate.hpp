#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "css/chance.hpp"
#include "css/compiler.hpp"
#include "css/geometry.hpp"
#include "css/systems.hpp"

namespace css::simulate {

struct SimConfig {
  double dt = 0.01;        // s
  double horizon = 20.0;   // s
  double sigma_scale = 1.0;
  std::uint64_t seed = 0;
  std::size_t runs = 1;
};

struct ViolationEvent {
  Eigen::Index face = 0;
  double time = 0.0;
};

struct ExitEvent {
  Eigen::Index face = 0;
  double time = 0.0;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Eigen::VectorXd> states;
  std::vector<Eigen::VectorXd> inputs;  // one fewer than states
  std::vector<ViolationEvent> violation_events;
  std::optional<ExitEvent> exit_event;
};

/// Explicit-Euler closed loop xdot = A x + B K (x - x_ref + theta) with
/// theta ~ N(0, sigma_scale^2 Sigma(x)) redrawn at every step. Records every
/// face violation (d_i < 0); in path mode integration stops at the first
/// crossing of `exit_face`, which is excluded from violation accounting.
/// Deterministic per cfg.seed. Throws non_finite when the state diverges.
Trajectory rollout(const systems::LinearSystem& sys, const Eigen::MatrixXd& k,
                   const Eigen::VectorXd& x0, const geometry::Polytope& cell,
                   const chance::NoiseModel& noise, const SimConfig& cfg,
                   const Eigen::VectorXd& x_ref,
                   std::optional<Eigen::Index> exit_face = std::nullopt);

/// One rollout per run index, seeded seed + run_index, fanned out across
/// workers.
std::vector<Trajectory> rollout_batch(const systems::LinearSystem& sys, const Eigen::MatrixXd& k,
                                      const Eigen::VectorXd& x0, const geometry::Polytope& cell,
                                      const chance::NoiseModel& noise, const SimConfig& cfg,
                                      const Eigen::VectorXd& x_ref,
                                      std::optional<Eigen::Index> exit_face = std::nullopt);

struct ViolationStats {
  double violation_run_fraction = 0.0;
  std::vector<long> per_face_counts;
  double mean_exit_time = 0.0;  // +inf unless every run exited
};

ViolationStats violation_stats(const std::vector<Trajectory>& trajectories,
                               Eigen::Index num_faces);

/// Grid classification for the zero-velocity invariant-set estimate.
enum class CellClass : std::uint8_t { outside_polygon = 0, not_member = 1, member = 2 };

struct InvariantSetEstimate {
  Eigen::Index resolution = 0;
  Eigen::Vector2d lo;
  Eigen::Vector2d hi;
  std::vector<CellClass> cells;  // row-major, resolution x resolution
  double covered_fraction = 0.0; // members / cells inside the polygon

  CellClass at(Eigen::Index ix, Eigen::Index iy) const { return cells[static_cast<std::size_t>(iy * resolution + ix)]; }
  Eigen::Vector2d center(Eigen::Index ix, Eigen::Index iy) const;
};

/// Noiseless closed-loop membership test on a position grid: a cell belongs
/// to the set when the rollout from (position, zero velocity) stays inside
/// the full-state cell for the whole horizon and ends within settle_tol of
/// the equilibrium position. Assumes the 4-state [x, xdot, y, ydot] layout.
InvariantSetEstimate invariant_set_estimate(const systems::LinearSystem& sys,
                                            const Eigen::MatrixXd& k,
                                            const geometry::Polytope& polygon,
                                            const geometry::Polytope& cell,
                                            const Eigen::VectorXd& x_e,
                                            Eigen::Index grid_resolution, const SimConfig& cfg,
                                            double settle_tol = 0.05);

struct ChanceFieldEntry {
  std::string family;  // "cbf" | "cclf" | "cact"
  Eigen::Index index = 0;  // face or actuator row (0 for cclf)
  Eigen::VectorXd point;   // model-frame state
  double estimate = 0.0;
  double budget = 0.0;
  double wilson_halfwidth = 0.0;
  bool flagged = false;
};

struct ChanceFieldReport {
  std::vector<ChanceFieldEntry> entries;
  std::size_t flagged_count = 0;
};

/// Monte Carlo check of every compiled chance-constraint family at the given
/// model-frame sample points: a point is flagged when the empirical violation
/// probability exceeds its budget by more than three Wilson half-widths
/// (slack-absorbed constraints show up here).
ChanceFieldReport verify_chance_field(const compiler::SynthesisModel& model,
                                      const Eigen::MatrixXd& k,
                                      const std::vector<Eigen::VectorXd>& sample_points,
                                      std::uint64_t samples_per_point, std::uint64_t seed);

}  // namespace css::simulate
