#include <CLI11.hpp>

#include "css/commands.hpp"
#include "css/version.hpp"

int main(int argc, char** argv) {
  CLI::App app{"cssynth - chance-constrained safe controller synthesis for polytopic cells"};
  app.set_version_flag("--version", css::kVersion);
  app.require_subcommand(1);

  bool json_logs = false;
  app.add_flag("--json-logs", json_logs, "emit log lines as JSON on stderr");

  css::cli::SynthOptions synth;
  auto* synth_cmd = app.add_subcommand("synth", "synthesize a feedback gain from a scenario");
  synth_cmd->add_option("--scenario", synth.scenario_path, "scenario JSON file")->required();
  synth_cmd->add_option("--out", synth.out_path, "controller JSON output path")->required();
  std::string dump_qcqp;
  synth_cmd->add_option("--dump-qcqp", dump_qcqp, "write the compiled QCQP as debug JSON");

  css::cli::SimulateOptions sim;
  auto* sim_cmd = app.add_subcommand("simulate", "roll out the closed loop and write CSVs");
  sim_cmd->add_option("--scenario", sim.scenario_path, "scenario JSON file")->required();
  sim_cmd->add_option("--controller", sim.controller_path, "controller JSON file")->required();
  sim_cmd->add_option("--out", sim.out_dir, "output directory")->required();
  std::uint64_t seed = 0;
  auto* seed_opt = sim_cmd->add_option("--seed", seed, "override the scenario seed");
  std::size_t runs = 0;
  auto* runs_opt = sim_cmd->add_option("--runs", runs, "override the run count");
  std::vector<double> sigmas;
  auto* sigma_opt = sim_cmd->add_option("--sigma", sigmas, "override the sigma_scale list");

  css::cli::VerifyOptions verify;
  auto* verify_cmd =
      app.add_subcommand("verify", "Monte Carlo check of the chance constraints under K");
  verify_cmd->add_option("--scenario", verify.scenario_path, "scenario JSON file")->required();
  verify_cmd->add_option("--controller", verify.controller_path, "controller JSON file")
      ->required();
  std::string report_path;
  verify_cmd->add_option("--out", report_path, "report JSON path (stdout when omitted)");
  double verify_sigma = 0.0;
  auto* verify_sigma_opt =
      verify_cmd->add_option("--sigma", verify_sigma, "noise scale to verify at");
  verify_cmd->add_option("--points", verify.points, "number of interior sample points");
  verify_cmd->add_option("--samples", verify.samples, "Monte Carlo samples per point");
  std::uint64_t verify_seed = 0;
  auto* verify_seed_opt = verify_cmd->add_option("--seed", verify_seed, "sampling seed");

  css::cli::InvariantOptions invariant;
  auto* invariant_cmd =
      app.add_subcommand("invariant", "estimate the zero-velocity invariant set");
  invariant_cmd->add_option("--scenario", invariant.scenario_path, "scenario JSON file")
      ->required();
  invariant_cmd->add_option("--controller", invariant.controller_path, "controller JSON file")
      ->required();
  invariant_cmd->add_option("--out", invariant.out_dir, "output directory")->required();
  invariant_cmd->add_option("--resolution", invariant.resolution, "grid resolution per axis");

  css::cli::PlotOptions plot;
  auto* plot_cmd = app.add_subcommand("plot", "render SVG plots from simulate/invariant output");
  plot_cmd->add_option("--out", plot.out_dir, "directory holding the CSV artifacts")->required();

  CLI11_PARSE(app, argc, argv);

  if (synth_cmd->parsed()) {
    synth.common.json_logs = json_logs;
    if (!dump_qcqp.empty()) synth.dump_qcqp_path = dump_qcqp;
    return css::cli::cmd_synth(synth);
  }
  if (sim_cmd->parsed()) {
    sim.common.json_logs = json_logs;
    if (*seed_opt) sim.seed = seed;
    if (*runs_opt) sim.runs = runs;
    if (*sigma_opt) sim.sigma = sigmas;
    return css::cli::cmd_simulate(sim);
  }
  if (verify_cmd->parsed()) {
    verify.common.json_logs = json_logs;
    if (!report_path.empty()) verify.report_path = report_path;
    if (*verify_sigma_opt) verify.sigma = verify_sigma;
    if (*verify_seed_opt) verify.seed = verify_seed;
    return css::cli::cmd_verify(verify);
  }
  if (invariant_cmd->parsed()) {
    invariant.common.json_logs = json_logs;
    return css::cli::cmd_invariant(invariant);
  }
  if (plot_cmd->parsed()) {
    plot.common.json_logs = json_logs;
    return css::cli::cmd_plot(plot);
  }
  return css::cli::exit_usage;
}
