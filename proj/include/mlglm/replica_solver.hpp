#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mlglm/channels.hpp"
#include "mlglm/quadrature.hpp"

namespace mlglm {

/// Order parameters of the replica-symmetric saddle point, indexed by layer
/// l = 0..L-1 (layer l maps x^(l) to x^(l+1) through alpha_l and its activation).
///
///   T[l]       power entering layer l, E|x^(l)|^2
///   d[l]       power of the MMSE estimate of x^(l), 0 <= d <= T
///   q[l]       power of the MMSE estimate of z^(l) = H^(l) x^(l)
///   d_tilde[l] conjugate of d[l]; the equivalent scalar channel seen by
///              x^(l) from downstream has noise variance 1 / (2 d_tilde[l])
///
/// In the two-layer notation (c, d, e, f, q, h, d~, f~):
///   c = T[0], d = d[0], q = q[0], d~ = d_tilde[0],
///   e = T[1], f = d[1], h = q[1], f~ = d_tilde[1].
struct ReplicaState {
  std::vector<double> T;
  std::vector<double> d;
  std::vector<double> q;
  std::vector<double> d_tilde;

  std::size_t depth() const { return T.size(); }
  static ReplicaState zeros(std::size_t depth);
};

enum class InitStyle { cold, warm, multi_start };

struct SolverOptions {
  double damping = 0.5;
  double tol = 1e-9;
  int max_iter = 20000;
  int grid_order = kDefaultGridOrder;
  InitStyle init = InitStyle::cold;
  /// Used when init == warm.
  std::optional<ReplicaState> warm_state;
  /// Used when init == multi_start: each start sets d[l] = fraction * T[l].
  std::vector<double> start_fractions = {1e-3, 0.5, 1.0 - 1e-6};

  void validate() const;
};

struct FixedPointSolution {
  ReplicaState state;
  double eta = 0.0;
  double avg_mse = 0.0;
  bool converged = false;
};

struct FixedPointResult {
  ReplicaState state;
  /// 1 / (2 d_tilde[0]).
  double eta = 0.0;
  /// T[0] - d[0].
  double avg_mse = 0.0;
  int iterations = 0;
  double residual = 0.0;
  bool converged = false;
  /// Perfect recovery at some layer: d_tilde hit the 1e12 cap or d hit
  /// T (1 - 1e-9). eta then reflects the clamp rather than a finite limit.
  bool saturated = false;
  /// Distinct fixed points reached from the multi-start inits.
  std::vector<FixedPointSolution> all_solutions;
};

// ---------------------------------------------------------------------------
// Per-layer scalar channel: z ~ N(m, v), x ~ P(x|z), observed through
// zeta = x + sqrt(eta) n. eta below kDiracVariance observes x exactly.

struct LayerPosteriorPower {
  double z_power;  // E[(E[z | zeta])^2]
  double x_power;  // E[(E[x | zeta])^2]
  double z_gain;   // E[(E[z | zeta] - m)^2] = z_power - m^2
  double x_error;  // E[Var(x | zeta)] = E[x^2] - x_power
};

LayerPosteriorPower layer_posterior_power(const Activation& act, double m, double v, double eta,
                                          const HermiteGrid& grid);

/// E[z | x = y] for z ~ N(m, v) with y observed exactly.
double z_posterior_mean(const Activation& act, double y, double m, double v);

/// E|x|^2 with z ~ N(0, z_var).
double activation_power(const Activation& act, double z_var);

// ---------------------------------------------------------------------------
// Update equations

std::vector<double> forward_power_sweep(const NetworkSpec& net, const HermiteGrid& grid);

/// q of the last layer, where the observation y is the network output.
double q_last_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state);

/// q[l] for l < L-1: z^(l) observed through its activation and the scalar
/// channel of strength d_tilde[l+1].
double q_middle_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state,
                      std::size_t l);

/// d[l] for l >= 1: power of the estimate of x^(l) produced by layer l-1.
double d_middle_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state,
                      std::size_t l);

struct DTildeUpdate {
  double value;
  bool saturated;
};

/// alpha (alpha q - d) / (2 (T - d)^2), clamped to [1e-12, 1e12].
DTildeUpdate d_tilde_update(const ReplicaState& state, std::size_t l, double alpha);

/// E[<X>^2] of the scalar channel with eta = 1 / (2 d_tilde[0]).
double d_first_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state);

/// Largest relative change produced by one undamped backward/forward sweep
/// started from `state`.
double fixed_point_residual(const NetworkSpec& net, const HermiteGrid& grid,
                            const ReplicaState& state);

FixedPointResult solve(const NetworkSpec& net, const SolverOptions& opts = {});

/// Iterates eta <- sigma_w2 + mmse(eta) / alpha for the one-layer linear model.
FixedPointResult solve_slm(const Prior& prior, double sigma_w2, double alpha,
                           const SolverOptions& opts = {});

}  // namespace mlglm
