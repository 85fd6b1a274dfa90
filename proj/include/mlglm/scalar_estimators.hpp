#pragma once

#include "mlglm/channels.hpp"
#include "mlglm/quadrature.hpp"

namespace mlglm {

/// Smallest effective noise variance accepted by the scalar channel.
inline constexpr double kMinEta = 1e-12;

/// Scalar AWGN channel Y = X0 + W, W ~ N(0, eta), X0 ~ prior.
class SisoChannel {
 public:
  SisoChannel(Prior prior, double eta);

  const Prior& prior() const { return prior_; }
  double eta() const { return eta_; }

 private:
  Prior prior_;
  double eta_;
};

/// E[X0 | Y = y].
double posterior_mean(const SisoChannel& ch, double y);

/// Var[X0 | Y = y].
double posterior_variance(const SisoChannel& ch, double y);

/// E[<X>^2], the power of the MMSE estimate.
double estimate_power(const SisoChannel& ch, const HermiteGrid& grid = default_grid());

/// E[(X0 - <X>)^2], accumulated as E[Var(X0 | Y)] so that small errors keep
/// their relative precision. Equals E[X0^2] - E[<X>^2].
double scalar_mmse(const SisoChannel& ch, const HermiteGrid& grid = default_grid());

/// E[X0^i <X>^j], i + j <= 8.
double siso_joint_moment(const SisoChannel& ch, int i, int j,
                         const HermiteGrid& grid = default_grid());

/// 1 - E_z[tanh(2 d + sqrt(2 d) z)]: MMSE of the +-1 prior at eta = 1 / (2 d).
double qpsk_mse_closed_form(double d_tilde, const HermiteGrid& grid = default_grid());

double q_function(double x);

/// 2 Q(sqrt(a)) - Q(sqrt(a))^2 for a >= 0 (a = +inf gives 0).
///
/// `snr_arg` is taken literally. Per-dimension +-1 symbols observed through
/// the effective channel correspond to snr_arg = 1 / eta; see metrics::symbol_error_rate.
double mse_to_ser_qpsk(double snr_arg);

}  // namespace mlglm
