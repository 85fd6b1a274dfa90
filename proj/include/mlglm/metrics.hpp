#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "mlglm/channels.hpp"
#include "mlglm/replica_solver.hpp"

namespace mlglm {

struct AvgMse {
  double value = 0.0;
  /// Set when the fixed point did not converge.
  bool warning = false;
};

/// T_X^(1) - d^(1).
AvgMse avg_mse_from_state(const FixedPointResult& result);

/// sigma_w^2 / eta; throws std::invalid_argument unless both are positive.
double multiuser_efficiency(const FixedPointResult& result, double noise_variance);

/// Symbol error rate of a two-atom prior {a, b} read through the effective
/// channel: mse_to_ser_qpsk(((b - a) / 2)^2 / eta). Empty for other priors.
std::optional<double> symbol_error_rate(const Prior& prior, double eta);

enum class SweepAxis { noise_variance, alpha_of_layer, sparsity };

/// noise_variance sets the awgn variance of the last layer (the pre-noise
/// variance when it is a quantizer); alpha_of_layer sets alpha of `layer`;
/// sparsity needs a Bernoulli-Gaussian prior.
struct SweepSpec {
  NetworkSpec base;
  SweepAxis axis = SweepAxis::noise_variance;
  std::size_t layer = 0;
  std::vector<double> values;

  /// Throws std::invalid_argument unless values is nonempty and strictly
  /// monotonic and the axis applies to base.
  void validate() const;
  NetworkSpec at(double value) const;
};

struct SweepOptions {
  SolverOptions solver;
  /// Solve the points concurrently; warm starts are then disabled.
  bool parallel = false;
  int threads = 1;
};

struct SweepRow {
  double axis_value = 0.0;
  double eta = 0.0;
  double avg_mse = 0.0;
  std::optional<double> ser;
  int iterations = 0;
  bool converged = false;
  /// Non-empty when the point failed to solve.
  std::string error;
  FixedPointResult result;
};

/// One row per axis value. Sequential sweeps warm-start each point from the
/// last converged one; a failure is recorded in its row and the sweep goes on.
std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepOptions& opts = {});

inline constexpr const char* kSweepCsvHeader = "axis,eta,avg_mse,ser,iterations,converged";

/// Header plus one line per row; blank cells for missing values.
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace mlglm
