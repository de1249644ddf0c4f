#include "css/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "css/error.hpp"
#include "css/geometry.hpp"
#include "css/linalg.hpp"
#include "css/scenario.hpp"
#include "css/simulate.hpp"
#include "css/solvers.hpp"
#include "css/svg.hpp"
#include "css/version.hpp"

namespace css::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log_line(const CommonOptions& common, const std::string& level, const std::string& message) {
  if (common.json_logs) {
    json j{{"level", level}, {"msg", message}};
    std::cerr << j.dump() << "\n";
  } else {
    std::cerr << "[" << level << "] " << message << "\n";
  }
}

std::uint64_t fnv1a64(const std::string& data) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const unsigned char c : data) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t v) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%016llx", static_cast<unsigned long long>(v));
  return buffer;
}

std::string fmt_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

/// File-name-safe sigma tag: 0.1 -> "0p1".
std::string fmt_sigma(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%g", v);
  std::string s = buffer;
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::missing_data, "cannot write " + path.string());
  }
  out << content;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::missing_data, "cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

int exit_code_for(const Error& error) {
  switch (error.code()) {
    case ErrorCode::infeasible:
      return exit_infeasible;
    case ErrorCode::numerical_failure:
    case ErrorCode::non_finite:
    case ErrorCode::cholesky_failure:
    case ErrorCode::non_psd:
      return exit_numerical;
    default:
      return exit_usage;
  }
}

template <typename Fn>
int run_command(const CommonOptions& common, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& error) {
    log_line(common, "error", error.what());
    return exit_code_for(error);
  } catch (const std::exception& error) {
    log_line(common, "error", error.what());
    return exit_usage;
  }
}

void check_controller(const Scenario& scenario, const Controller& controller) {
  if (controller.status != "optimal") {
    throw Error(ErrorCode::invalid_argument,
                "controller status is '" + controller.status + "', expected optimal");
  }
  if (controller.k.rows() != scenario.system.b.cols() ||
      controller.k.cols() != scenario.system.a.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "controller K shape does not match the scenario");
  }
}

std::string trajectory_csv(const simulate::Trajectory& traj, const geometry::Polytope& cell) {
  const geometry::FaceDistance distances(cell);
  const Eigen::Index nx = traj.states.front().size();
  const Eigen::Index nu = traj.inputs.empty() ? 0 : traj.inputs.front().size();

  std::string out = "t";
  for (Eigen::Index i = 0; i < nx; ++i) out += ",x" + std::to_string(i);
  for (Eigen::Index i = 0; i < nu; ++i) out += ",u" + std::to_string(i);
  for (Eigen::Index i = 0; i < cell.num_faces(); ++i) out += ",d" + std::to_string(i);
  out += "\n";

  for (std::size_t row = 0; row < traj.states.size(); ++row) {
    out += fmt_double(traj.times[row]);
    const Eigen::VectorXd& x = traj.states[row];
    for (Eigen::Index i = 0; i < nx; ++i) out += "," + fmt_double(x[i]);
    for (Eigen::Index i = 0; i < nu; ++i) {
      out += "," + (row < traj.inputs.size() ? fmt_double(traj.inputs[row][i]) : std::string("0"));
    }
    const Eigen::VectorXd d = distances(x);
    for (Eigen::Index i = 0; i < d.size(); ++i) out += "," + fmt_double(d[i]);
    out += "\n";
  }
  return out;
}

json stats_json(const simulate::ViolationStats& stats) {
  json j;
  j["violation_run_fraction"] = stats.violation_run_fraction;
  j["per_face_counts"] = stats.per_face_counts;
  if (std::isfinite(stats.mean_exit_time)) {
    j["mean_exit_time"] = stats.mean_exit_time;
  } else {
    j["mean_exit_time"] = nullptr;
  }
  return j;
}

json base_manifest(const Scenario& scenario, const std::string& command) {
  json j;
  j["tool"] = "cssynth";
  j["version"] = kVersion;
  j["command"] = command;
  j["scenario_hash"] = "fnv1a64:" + hex64(fnv1a64(scenario.source_json));
  j["scenario"] = json::parse(scenario.source_json);
  return j;
}

}  // namespace

int cmd_synth(const SynthOptions& options) {
  return run_command(options.common, [&]() -> int {
    Scenario scenario = load_scenario(options.scenario_path);
    const SynthesisOutput synthesis = run_synthesis(scenario);
    const solvers::SynthesisResult& result = synthesis.result;
    log_line(options.common, "info",
             "compiled " + std::to_string(synthesis.problem.constraints.size()) +
                 " constraints over " +
                 std::to_string(synthesis.scenario_model.model.cell.vertices().size()) +
                 " vertices");
    if (options.dump_qcqp_path) {
      write_file(*options.dump_qcqp_path, compiler::qcqp_debug_json(synthesis.problem));
    }
    log_line(options.common, "info",
             std::string("solver status: ") + solvers::to_string(result.status));

    Controller controller;
    controller.status = solvers::to_string(result.status);
    if (result.status == solvers::SolveStatus::optimal) {
      controller.k = result.k;
      controller.slacks = result.slacks;
      controller.objective = result.objective_value;
      if (result.p) controller.p = *result.p;
    }
    write_file(options.out_path, controller_to_json(controller));

    switch (result.status) {
      case solvers::SolveStatus::optimal:
        return exit_ok;
      case solvers::SolveStatus::infeasible:
        return exit_infeasible;
      case solvers::SolveStatus::max_iters:
        return exit_numerical;
    }
    return exit_numerical;
  });
}

int cmd_simulate(const SimulateOptions& options) {
  return run_command(options.common, [&]() -> int {
    Scenario scenario = load_scenario(options.scenario_path);
    if (options.seed) scenario.sim.seed = *options.seed;
    if (options.runs) scenario.sim.runs = *options.runs;
    if (options.sigma) scenario.sigma_scales = *options.sigma;
    const std::string controller_text = read_file(options.controller_path);
    const Controller controller = parse_controller(controller_text);
    check_controller(scenario, controller);
    const ScenarioModel sm = build_model(scenario);

    fs::create_directories(options.out_dir);

    json manifest = base_manifest(scenario, "simulate");
    manifest["controller_hash"] = "fnv1a64:" + hex64(fnv1a64(controller_text));
    manifest["seed"] = scenario.sim.seed;
    manifest["runs"] = scenario.sim.runs;
    manifest["sigma_scale"] = scenario.sigma_scales;
    manifest["dt"] = scenario.sim.dt;
    manifest["horizon"] = scenario.sim.horizon;

    json summary;
    summary["task"] = scenario.task == compiler::Task::equilibrium ? "equilibrium" : "path";
    summary["sigma"] = json::array();
    json files = json::array();

    const Eigen::Vector2d target(sm.x_e.size() == 4 ? sm.x_e[0] : 0.0,
                                 sm.x_e.size() == 4 ? sm.x_e[2] : 0.0);

    for (double sigma : scenario.sigma_scales) {
      simulate::SimConfig cfg = scenario.sim;
      cfg.sigma_scale = sigma;
      const std::vector<simulate::Trajectory> batch =
          simulate::rollout_batch(scenario.system, controller.k, sm.x0, sm.cell, scenario.noise,
                                  cfg, sm.x_e, sm.exit_cell_face);
      const simulate::ViolationStats stats =
          simulate::violation_stats(batch, sm.cell.num_faces());

      json entry = stats_json(stats);
      entry["sigma"] = sigma;
      entry["runs"] = batch.size();
      if (scenario.task == compiler::Task::equilibrium && scenario.system.a.rows() == 4) {
        json errors = json::array();
        for (const auto& traj : batch) {
          const Eigen::VectorXd& last = traj.states.back();
          errors.push_back((Eigen::Vector2d(last[0], last[2]) - target).norm());
        }
        entry["final_position_error"] = std::move(errors);
      }
      if (scenario.task == compiler::Task::path) {
        std::size_t exited = 0;
        for (const auto& traj : batch) exited += traj.exit_event.has_value();
        entry["exited_runs"] = exited;
      }
      summary["sigma"].push_back(std::move(entry));

      for (std::size_t run = 0; run < batch.size(); ++run) {
        char name[128];
        std::snprintf(name, sizeof(name), "traj_sigma%s_run%03zu.csv", fmt_sigma(sigma).c_str(),
                      run);
        write_file(fs::path(options.out_dir) / name, trajectory_csv(batch[run], sm.cell));
        files.push_back(name);
      }
      log_line(options.common, "info",
               "sigma " + fmt_sigma(sigma) + ": violation fraction " +
                   std::to_string(stats.violation_run_fraction));
    }

    manifest["trajectories"] = std::move(files);
    write_file(fs::path(options.out_dir) / "summary.json", summary.dump(2) + "\n");
    write_file(fs::path(options.out_dir) / "manifest.json", manifest.dump(2) + "\n");
    return exit_ok;
  });
}

int cmd_verify(const VerifyOptions& options) {
  return run_command(options.common, [&]() -> int {
    Scenario scenario = load_scenario(options.scenario_path);
    if (options.sigma) scenario.params.sigma_synth = *options.sigma;
    const Controller controller = load_controller(options.controller_path);
    check_controller(scenario, controller);
    ScenarioModel sm = build_model(scenario);
    if (controller.p) sm.model.lyapunov_p = *controller.p;

    const std::uint64_t seed = options.seed.value_or(scenario.sim.seed);
    const std::vector<Eigen::VectorXd> points =
        geometry::sample_interior(sm.model.cell, options.points, seed);
    const simulate::ChanceFieldReport report =
        simulate::verify_chance_field(sm.model, controller.k, points, options.samples, seed);

    json j;
    j["points"] = options.points;
    j["samples_per_point"] = options.samples;
    j["sigma"] = scenario.params.sigma_synth;
    std::map<std::string, std::pair<std::size_t, std::size_t>> family_counts;
    json flagged = json::array();
    for (const auto& entry : report.entries) {
      auto& [total, bad] = family_counts[entry.family];
      ++total;
      bad += entry.flagged;
      if (entry.flagged) {
        json e;
        e["family"] = entry.family;
        e["index"] = entry.index;
        e["point"] = std::vector<double>(entry.point.data(),
                                         entry.point.data() + entry.point.size());
        e["estimate"] = entry.estimate;
        e["budget"] = entry.budget;
        e["wilson_halfwidth"] = entry.wilson_halfwidth;
        flagged.push_back(std::move(e));
      }
    }
    j["families"] = json::object();
    bool pass = true;
    for (const auto& [family, counts] : family_counts) {
      j["families"][family] = {{"checked", counts.first},
                               {"flagged", counts.second},
                               {"pass", counts.second == 0}};
      pass = pass && counts.second == 0;
    }
    j["flagged"] = std::move(flagged);

    if (scenario.task == compiler::Task::equilibrium) {
      if (!controller.p) {
        throw Error(ErrorCode::missing_p, "controller file has no Lyapunov matrix");
      }
      const double max_eig = solvers::verify_lyapunov(*controller.p, scenario.system.a,
                                                      scenario.system.b, controller.k,
                                                      scenario.params.beta_v);
      j["lyapunov"] = {{"max_eig", max_eig}, {"pass", max_eig < 0.0}};
      pass = pass && max_eig < 0.0;
    }
    j["pass"] = pass;

    const std::string text = j.dump(2) + "\n";
    if (options.report_path) {
      write_file(*options.report_path, text);
    } else {
      std::cout << text;
    }
    log_line(options.common, "info",
             std::string("verification ") + (pass ? "passed" : "failed") + " (" +
                 std::to_string(report.flagged_count) + " flagged)");
    return pass ? exit_ok : exit_verification;
  });
}

int cmd_invariant(const InvariantOptions& options) {
  return run_command(options.common, [&]() -> int {
    Scenario scenario = load_scenario(options.scenario_path);
    if (scenario.task != compiler::Task::equilibrium || !scenario.builtin_double_integrator) {
      throw Error(ErrorCode::invalid_argument,
                  "invariant sets are defined for equilibrium double-integrator scenarios");
    }
    const Controller controller = load_controller(options.controller_path);
    check_controller(scenario, controller);
    const ScenarioModel sm = build_model(scenario);
    const geometry::Polytope polygon = geometry::Polytope::from_halfspaces(
        scenario.polygon_normals, scenario.polygon_offsets);

    const simulate::InvariantSetEstimate estimate = simulate::invariant_set_estimate(
        scenario.system, controller.k, polygon, sm.cell, sm.x_e, options.resolution,
        scenario.sim);

    fs::create_directories(options.out_dir);
    std::string csv = "px,py,class\n";
    for (Eigen::Index iy = 0; iy < estimate.resolution; ++iy) {
      for (Eigen::Index ix = 0; ix < estimate.resolution; ++ix) {
        const Eigen::Vector2d c = estimate.center(ix, iy);
        csv += fmt_double(c.x()) + "," + fmt_double(c.y()) + "," +
               std::to_string(static_cast<int>(estimate.at(ix, iy))) + "\n";
      }
    }
    write_file(fs::path(options.out_dir) / "invariant_grid.csv", csv);

    json j;
    j["resolution"] = estimate.resolution;
    j["lo"] = {estimate.lo.x(), estimate.lo.y()};
    j["hi"] = {estimate.hi.x(), estimate.hi.y()};
    j["covered_fraction"] = estimate.covered_fraction;
    write_file(fs::path(options.out_dir) / "invariant_summary.json", j.dump(2) + "\n");

    json manifest = base_manifest(scenario, "invariant");
    manifest["resolution"] = estimate.resolution;
    write_file(fs::path(options.out_dir) / "invariant_manifest.json", manifest.dump(2) + "\n");

    log_line(options.common, "info",
             "invariant set covers " + std::to_string(estimate.covered_fraction) +
                 " of the polygon");
    return exit_ok;
  });
}

namespace {

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  Eigen::Index column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return static_cast<Eigen::Index>(i);
    }
    throw Error(ErrorCode::missing_data, "CSV column '" + name + "' not found");
  }
};

CsvTable read_csv(const fs::path& path) {
  const std::string text = read_file(path);
  CsvTable table;
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line)) {
    throw Error(ErrorCode::missing_data, "empty CSV " + path.string());
  }
  std::istringstream header(line);
  std::string field;
  while (std::getline(header, field, ',')) table.columns.push_back(field);
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    row.reserve(table.columns.size());
    std::istringstream cells(line);
    while (std::getline(cells, field, ',')) row.push_back(std::strtod(field.c_str(), nullptr));
    if (row.size() != table.columns.size()) {
      throw Error(ErrorCode::missing_data, "ragged CSV " + path.string());
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::vector<Eigen::Vector2d> polygon_ring(const geometry::Polytope& polygon) {
  // Order the polygon vertices by angle around the centroid.
  std::vector<Eigen::Vector2d> points;
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& v : polygon.vertices()) {
    points.emplace_back(v[0], v[1]);
    centroid += points.back();
  }
  centroid /= static_cast<double>(points.size());
  std::sort(points.begin(), points.end(),
            [&](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
              return std::atan2(a.y() - centroid.y(), a.x() - centroid.x()) <
                     std::atan2(b.y() - centroid.y(), b.x() - centroid.x());
            });
  return points;
}

}  // namespace

int cmd_plot(const PlotOptions& options) {
  return run_command(options.common, [&]() -> int {
    const fs::path dir(options.out_dir);
    if (!fs::exists(dir / "manifest.json")) {
      throw Error(ErrorCode::missing_data, "no manifest.json in " + options.out_dir +
                                               " (run simulate first)");
    }
    const json manifest = json::parse(read_file(dir / "manifest.json"));
    const Scenario scenario = parse_scenario(manifest.at("scenario").dump());
    const ScenarioModel sm = build_model(scenario);
    const geometry::Polytope polygon = geometry::Polytope::from_halfspaces(
        scenario.polygon_normals, scenario.polygon_offsets);

    // Collect trajectory files grouped by their sigma tag.
    std::map<std::string, std::vector<fs::path>> groups;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("traj_sigma", 0) != 0 || entry.path().extension() != ".csv") continue;
      const std::size_t run_pos = name.find("_run");
      if (run_pos == std::string::npos) continue;
      groups[name.substr(10, run_pos - 10)].push_back(entry.path());
    }
    if (groups.empty()) {
      throw Error(ErrorCode::missing_data, "no trajectory CSV files in " + options.out_dir);
    }
    for (auto& [sigma, paths] : groups) std::sort(paths.begin(), paths.end());

    // Optional invariant-set overlay.
    std::optional<CsvTable> invariant;
    if (fs::exists(dir / "invariant_grid.csv")) invariant = read_csv(dir / "invariant_grid.csv");

    Eigen::VectorXd lo;
    Eigen::VectorXd hi;
    polygon.bounding_box(lo, hi);
    const std::vector<Eigen::Vector2d> ring = polygon_ring(polygon);

    int written = 0;
    for (const auto& [sigma_tag, paths] : groups) {
      SvgCanvas canvas(lo[0], lo[1], hi[0], hi[1]);

      if (invariant) {
        const Eigen::Index cx = invariant->column("px");
        const Eigen::Index cy = invariant->column("py");
        const Eigen::Index cc = invariant->column("class");
        // Cell size from the grid resolution recorded alongside.
        const json inv_summary = json::parse(read_file(dir / "invariant_summary.json"));
        const auto resolution = inv_summary.at("resolution").get<double>();
        const double wx = (hi[0] - lo[0]) / resolution / 2.0;
        const double wy = (hi[1] - lo[1]) / resolution / 2.0;
        for (const auto& row : invariant->rows) {
          if (static_cast<int>(row[static_cast<std::size_t>(cc)]) !=
              static_cast<int>(simulate::CellClass::member)) {
            continue;
          }
          const Eigen::Vector2d c(row[static_cast<std::size_t>(cx)],
                                  row[static_cast<std::size_t>(cy)]);
          canvas.rect({c.x() - wx, c.y() - wy}, {c.x() + wx, c.y() + wy}, "#2e8b57", 0.35);
        }
      }

      canvas.polygon(ring, "#cc2222", "none", 2.5);

      if (sm.exit_cell_face && scenario.exit_face) {
        // Highlight the exit edge: the polygon face with the original index.
        const Eigen::Index face =
            *scenario.exit_face;  // original row in the scenario polygon
        std::vector<Eigen::Vector2d> on_face;
        const Eigen::RowVectorXd row = scenario.polygon_normals.row(face);
        const double offset = scenario.polygon_offsets[face];
        for (const auto& v : polygon.vertices()) {
          if (std::abs(row.dot(v) - offset) < 1e-9 * std::max(1.0, std::abs(offset))) {
            on_face.emplace_back(v[0], v[1]);
          }
        }
        if (on_face.size() == 2) canvas.line(on_face[0], on_face[1], "#ff8800", 5.0);
      }

      for (const auto& path : paths) {
        const CsvTable table = read_csv(path);
        const Eigen::Index cx = table.column("x0");
        const Eigen::Index cy = table.column("x2");
        std::vector<Eigen::Vector2d> pts;
        pts.reserve(table.rows.size());
        for (const auto& row : table.rows) {
          pts.emplace_back(row[static_cast<std::size_t>(cx)], row[static_cast<std::size_t>(cy)]);
        }
        canvas.polyline(pts, "#1f4fbf", 1.5);
      }

      if (scenario.task == compiler::Task::equilibrium) {
        canvas.circle({sm.x_e[0], sm.x_e[2]}, 0.02 * (hi - lo).maxCoeff(), "#2e8b57");
      }
      canvas.circle({sm.x0[0], sm.x0[2]}, 0.015 * (hi - lo).maxCoeff(), "#1f4fbf");
      canvas.text({lo[0], hi[1]}, "sigma=" + sigma_tag);

      const std::string name = "plot_sigma" + sigma_tag + ".svg";
      write_file(dir / name, canvas.str());
      ++written;
    }

    log_line(options.common, "info", "wrote " + std::to_string(written) + " SVG plots");
    return exit_ok;
  });
}

}  // namespace css::cli
