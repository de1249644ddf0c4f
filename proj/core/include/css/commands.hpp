#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace css::cli {

/// Process exit codes shared by every subcommand.
enum ExitCode : int {
  exit_ok = 0,
  exit_usage = 1,
  exit_infeasible = 2,
  exit_numerical = 3,
  exit_verification = 4,
};

struct CommonOptions {
  bool json_logs = false;
};

struct SynthOptions {
  std::string scenario_path;
  std::string out_path;
  std::optional<std::string> dump_qcqp_path;
  CommonOptions common;
};

struct SimulateOptions {
  std::string scenario_path;
  std::string controller_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::optional<std::vector<double>> sigma;  // overrides the scenario list
  CommonOptions common;
};

struct VerifyOptions {
  std::string scenario_path;
  std::string controller_path;
  std::optional<std::string> report_path;
  std::optional<double> sigma;  // scales the noise model before checking
  std::size_t points = 200;
  std::uint64_t samples = 20000;
  std::optional<std::uint64_t> seed;
  CommonOptions common;
};

struct InvariantOptions {
  std::string scenario_path;
  std::string controller_path;
  std::string out_dir;
  Eigen::Index resolution = 100;
  CommonOptions common;
};

struct PlotOptions {
  std::string out_dir;  // directory holding simulate/invariant artifacts
  CommonOptions common;
};

int cmd_synth(const SynthOptions& options);
int cmd_simulate(const SimulateOptions& options);
int cmd_verify(const VerifyOptions& options);
int cmd_invariant(const InvariantOptions& options);
int cmd_plot(const PlotOptions& options);

}  // namespace css::cli
