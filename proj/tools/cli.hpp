#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mlglm/channels.hpp"
#include "mlglm/metrics.hpp"
#include "mlglm/replica_solver.hpp"
#include "mlglm/simulator.hpp"

namespace mlglm::cli {

enum ExitCode : int {
  kOk = 0,
  kValidationFailed = 1,
  kConfigError = 2,
  kNotConverged = 3,
  kOracleInfeasible = 4,
};

/// Raised for malformed configs; the message names the offending key path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SimulateConfig {
  /// Either explicit dims or n_in (dims then follow the layer ratios).
  std::vector<std::size_t> dims;
  SimulationOptions sim;
  std::vector<MomentPair> moments = {{1, 1}, {0, 2}, {2, 0}, {2, 2}};
  double z_threshold = 4.0;
  double allowance = 0.05;
};

struct SweepConfig {
  SweepAxis axis = SweepAxis::noise_variance;
  std::size_t layer = 0;
  std::vector<double> values;
  bool parallel = false;
};

enum class OutputFormat { csv, table };

struct OutputConfig {
  std::string path;
  OutputFormat format = OutputFormat::csv;
};

struct ExperimentConfig {
  NetworkSpec network;
  SolverOptions solver;
  std::optional<SimulateConfig> simulate;
  std::optional<SweepConfig> sweep;
  OutputConfig output;
  /// Worker threads for trials and parallel sweeps; set by --threads only.
  int threads = 1;
};

/// Strict parse: unknown keys, wrong types and invalid values throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

nlohmann::json to_json(const ExperimentConfig& cfg);

struct Overrides {
  std::optional<std::string> out;
  std::optional<int> threads;
  std::optional<int> grid_order;
  std::optional<std::uint64_t> seed;
};

void apply_overrides(ExperimentConfig& cfg, const Overrides& o);

int cmd_predict(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_simulate(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_validate(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_sweep(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);

/// Full command line: `mlglm <predict|simulate|validate|sweep> --config <path> ...`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mlglm::cli
