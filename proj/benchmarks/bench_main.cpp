#include <benchmark/benchmark.h>

#include <cmath>

#include "css/chance.hpp"
#include "css/compiler.hpp"
#include "css/geometry.hpp"
#include "css/scenario.hpp"
#include "css/simulate.hpp"
#include "css/solvers.hpp"
#include "css/systems.hpp"

namespace {

namespace geo = css::geometry;
namespace sys = css::systems;

geo::Polytope pentagon() {
  Eigen::MatrixXd a(5, 2);
  Eigen::VectorXd b(5);
  for (int i = 0; i < 5; ++i) {
    const double angle = 2.0 * M_PI * i / 5.0;
    a(i, 0) = std::cos(angle);
    a(i, 1) = std::sin(angle);
    b[i] = 2.0;
  }
  return geo::Polytope::from_halfspaces(a, b);
}

css::cli::Scenario path_scenario() {
  return css::cli::load_scenario(std::string(CSS_SCENARIO_DIR) + "/path_ring.json");
}

void BM_VertexEnumeration4D(benchmark::State& state) {
  const geo::Polytope polygon = pentagon();
  for (auto _ : state) {
    benchmark::DoNotOptimize(sys::lift_position_constraints(polygon, 2.0).cell.vertices());
  }
}
BENCHMARK(BM_VertexEnumeration4D);

void BM_RiskBudgetEvaluation(benchmark::State& state) {
  const geo::Polytope polygon = pentagon();
  const geo::RiskBudget budget = geo::risk_budget_for(polygon);
  const auto points = geo::sample_interior(polygon, 256, 11);
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& x = points[i++ % points.size()];
    for (Eigen::Index face = 0; face < polygon.num_faces(); ++face) {
      benchmark::DoNotOptimize(budget(x, face));
    }
  }
}
BENCHMARK(BM_RiskBudgetEvaluation);

void BM_CompileQcqp(benchmark::State& state) {
  const css::cli::Scenario scenario = path_scenario();
  const css::cli::ScenarioModel sm = css::cli::build_model(scenario);
  for (auto _ : state) {
    benchmark::DoNotOptimize(css::compiler::assemble(sm.model));
  }
}
BENCHMARK(BM_CompileQcqp);

void BM_SolvePathQcqp(benchmark::State& state) {
  const css::cli::Scenario scenario = path_scenario();
  const css::cli::ScenarioModel sm = css::cli::build_model(scenario);
  const css::compiler::QcqpProblem problem = css::compiler::assemble(sm.model);
  for (auto _ : state) {
    benchmark::DoNotOptimize(css::solvers::solve_qcqp(problem, scenario.solver));
  }
}
BENCHMARK(BM_SolvePathQcqp);

void BM_MonteCarloChance(benchmark::State& state) {
  css::chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Ones(4);
  f.c = -6.0;
  const css::chance::NoiseModel sigma{Eigen::MatrixXd::Identity(4, 4)};
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        css::chance::monte_carlo_probability(f, x, sigma, 100000, 7));
  }
}
BENCHMARK(BM_MonteCarloChance);

void BM_Rollout(benchmark::State& state) {
  const css::cli::Scenario scenario = path_scenario();
  const css::cli::ScenarioModel sm = css::cli::build_model(scenario);
  Eigen::MatrixXd k(2, 4);
  k << 0.03, -0.9, 0, 0, 0, 0, -0.9, -0.9;
  css::simulate::SimConfig cfg = scenario.sim;
  cfg.sigma_scale = 0.1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(css::simulate::rollout(scenario.system, k, sm.x0, sm.cell,
                                                    scenario.noise, cfg, sm.x_e,
                                                    sm.exit_cell_face));
  }
}
BENCHMARK(BM_Rollout);

}  // namespace

BENCHMARK_MAIN();
