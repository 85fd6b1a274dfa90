#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlglm/channels.hpp"
#include "mlglm/replica_solver.hpp"

namespace mlglm {

/// Largest number of configurations the brute-force oracle enumerates per layer.
inline constexpr double kOracleBudget = 1048576.0;  // 2^20

/// A drawn ML-GLM: dims[l] is N_{l+1} (dims has depth + 1 entries) and
/// matrices[l] is dims[l+1] x dims[l] with entries N(0, 1 / dims[l+1]).
struct FiniteNetwork {
  NetworkSpec spec;
  std::vector<std::size_t> dims;
  std::vector<Eigen::MatrixXd> matrices;
};

/// N_{l+1} = round(alpha_l N_l) starting from n_in.
std::vector<std::size_t> dims_for(const NetworkSpec& spec, std::size_t n_in);

/// Throws std::invalid_argument unless dims has depth + 1 positive entries
/// with |N_{l+1} - alpha_l N_l| <= 0.5 + 1e-9.
void check_dims(const NetworkSpec& spec, const std::vector<std::size_t>& dims);

FiniteNetwork sample_network(const NetworkSpec& spec, std::vector<std::size_t> dims, Rng& rng);

/// Test hook: all matrices zero, so the output carries no information on x0.
FiniteNetwork zero_network(const NetworkSpec& spec, std::vector<std::size_t> dims);

struct Trial {
  Eigen::VectorXd x0;
  Eigen::VectorXd y;
};

Trial sample_trial(const FiniteNetwork& net, Rng& rng);

/// Generator for stream `index` of `seed`; streams are independent of the
/// order in which they are created.
Rng stream_rng(std::uint64_t seed, std::uint64_t index);

class OracleInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws OracleInfeasible if exact_mmse_brute_force cannot handle the
/// network; the message carries the configuration arithmetic.
void check_brute_force(const NetworkSpec& spec, const std::vector<std::size_t>& dims);

/// E[x0 | y, H] by exhaustive summation over the discrete prior and every
/// discrete intermediate layer. A trailing run of awgn/identity layers is
/// integrated in closed form.
Eigen::VectorXd exact_mmse_brute_force(const FiniteNetwork& net, const Eigen::VectorXd& y);

/// Throws std::invalid_argument unless the prior is Gaussian and every
/// activation is awgn or identity.
void check_lmmse(const NetworkSpec& spec);

/// Joint-Gaussian conditional mean of x0 given y.
Eigen::VectorXd lmmse_gaussian_oracle(const FiniteNetwork& net, const Eigen::VectorXd& y);

/// (1 / N_1) trace of the posterior covariance of x0.
double lmmse_avg_mse(const FiniteNetwork& net);

// ---------------------------------------------------------------------------
// Monte Carlo

enum class OracleKind { brute_force, lmmse };

struct MomentPair {
  int i;
  int j;
};

struct SimulationOptions {
  std::size_t n_trials = 1000;
  std::uint64_t seed = 1;
  /// Draw fresh matrices for every trial; otherwise one draw serves the batch.
  bool redraw_matrices = true;
  OracleKind oracle = OracleKind::brute_force;
  int threads = 1;
};

struct TrialRecord {
  Eigen::VectorXd x0;
  Eigen::VectorXd y;
  Eigen::VectorXd xhat;
};

struct TrialBatch {
  std::vector<TrialRecord> records;
  std::uint64_t seed = 0;
  OracleKind oracle = OracleKind::brute_force;
};

/// Runs n_trials independent trials on networks of the given dims. Trial t
/// uses stream_rng(seed, t); with redraw_matrices off the shared matrices
/// come from stream_rng(seed, 2^64 - 1).
TrialBatch simulate(const NetworkSpec& spec, const std::vector<std::size_t>& dims,
                    const SimulationOptions& opts);

struct ValidationOptions {
  SimulationOptions sim;
  std::vector<MomentPair> moments = {{1, 1}, {0, 2}, {2, 0}, {2, 2}};
  double z_threshold = 4.0;
  /// Relative finite-size allowance on each prediction.
  double allowance = 0.05;
  SolverOptions solver;
};

struct MomentRow {
  MomentPair pair;
  double empirical = 0.0;
  double std_error = 0.0;
  double predicted = 0.0;
  /// (empirical - predicted) / std_error.
  double z = 0.0;
  /// max(0, |empirical - predicted| - allowance |predicted|) / std_error.
  double z_allowed = 0.0;
  bool pass = false;
};

struct DecouplingReport {
  std::size_t n_trials = 0;
  FixedPointResult fixed_point;
  std::vector<MomentRow> rows;
  /// Mean over trials of (1/N) sum_k (x0_k xhat_k - xhat_k^2).
  double orthogonality = 0.0;
  double orthogonality_se = 0.0;
  bool orthogonality_pass = false;
  double empirical_mse = 0.0;
  double empirical_mse_se = 0.0;
  bool all_pass = false;
};

/// Compares empirical joint moments of (x0_k, xhat_k) with the scalar-channel
/// predictions at the replica eta. Each trial contributes the coordinate
/// average, and standard errors are taken across trials.
DecouplingReport decoupling_moment_test(const NetworkSpec& spec,
                                        const std::vector<std::size_t>& dims,
                                        const ValidationOptions& opts);

}  // namespace mlglm
