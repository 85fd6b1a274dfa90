#include "mlglm/scalar_estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mlglm {

SisoChannel::SisoChannel(Prior prior, double eta) : prior_(std::move(prior)), eta_(eta) {
  if (!(eta > 0.0) || !std::isfinite(eta))
    throw std::invalid_argument("SisoChannel: eta must be finite and > 0, got " +
                                std::to_string(eta));
}

namespace {

double log_normal_pdf(double x, double var) {
  return -0.5 * x * x / var - 0.5 * std::log(2.0 * std::numbers::pi * var);
}

double discrete_posterior_mean(std::span<const Atom> atoms, double y, double eta) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (const auto& a : atoms) {
    if (a.weight <= 0.0) continue;
    max_log = std::max(max_log, std::log(a.weight) - (y - a.value) * (y - a.value) / (2.0 * eta));
  }
  double num = 0.0;
  double den = 0.0;
  for (const auto& a : atoms) {
    if (a.weight <= 0.0) continue;
    const double r =
        std::exp(std::log(a.weight) - (y - a.value) * (y - a.value) / (2.0 * eta) - max_log);
    num += r * a.value;
    den += r;
  }
  return num / den;
}

// Posterior mean and variance of a discrete prior, both measured from the
// most likely atom so that a concentrated posterior keeps its small variance.
struct DiscretePosterior {
  double mean;
  double variance;
};

DiscretePosterior discrete_posterior(std::span<const Atom> atoms, double y, double eta) {
  double max_log = -std::numeric_limits<double>::infinity();
  double anchor = 0.0;
  for (const auto& a : atoms) {
    if (a.weight <= 0.0) continue;
    const double l = std::log(a.weight) - (y - a.value) * (y - a.value) / (2.0 * eta);
    if (l > max_log) {
      max_log = l;
      anchor = a.value;
    }
  }
  double den = 0.0;
  double first = 0.0;
  for (const auto& a : atoms) {
    if (a.weight <= 0.0) continue;
    const double r =
        std::exp(std::log(a.weight) - (y - a.value) * (y - a.value) / (2.0 * eta) - max_log);
    den += r;
    first += r * (a.value - anchor);
  }
  const double shift = first / den;
  double second = 0.0;
  for (const auto& a : atoms) {
    if (a.weight <= 0.0) continue;
    const double r =
        std::exp(std::log(a.weight) - (y - a.value) * (y - a.value) / (2.0 * eta) - max_log);
    const double dev = a.value - anchor - shift;
    second += r * dev * dev;
  }
  return {anchor + shift, second / den};
}

// Integration step along y for the active part of a spike-and-slab prior.
// The spike/slab switch sits at |y| ~ sqrt(eta), so the step follows that
// scale rather than the slab width.
struct SlabAxis {
  double y_sd;
  double step;
  long half;
};

SlabAxis slab_axis(double s2, double eta, int order) {
  const double y_sd = std::sqrt(s2 + eta);
  const double step = (3.2 / order) * std::min(1.0, std::sqrt(eta) / y_sd);
  const long half = std::min(200000L, static_cast<long>(std::ceil(12.0 / step)));
  return {y_sd, step, half};
}

// E over (X0, Y) of f(X0, <X>(Y)).
//
// The posterior mean of a discrete or spike-and-slab prior is a ratio of
// Gaussian sums in y, so the y axis uses the dense rule. Gaussian pieces stay
// on the Hermite grid, where the integrand is polynomial.
template <class F>
double siso_expect(const SisoChannel& ch, const HermiteGrid& grid, F&& f) {
  const Prior& p = ch.prior();
  const double eta = ch.eta();
  const double noise_sd = std::sqrt(eta);
  switch (p.kind()) {
    case Prior::Kind::discrete: {
      const HermiteGrid& dense = dense_grid(grid.order());
      double acc = 0.0;
      for (const auto& a : p.atoms()) {
        if (a.weight <= 0.0) continue;
        acc += a.weight * gauss_expect(dense, [&](double n) {
                 return f(a.value, discrete_posterior_mean(p.atoms(), a.value + noise_sd * n, eta));
               });
      }
      return acc;
    }
    case Prior::Kind::gaussian: {
      const double sd = std::sqrt(p.variance());
      return gauss_expect_2d(grid, [&](double xi, double n) {
        const double x0 = p.location() + sd * xi;
        return f(x0, posterior_mean(ch, x0 + noise_sd * n));
      });
    }
    case Prior::Kind::bernoulli_gaussian: {
      const HermiteGrid& dense = dense_grid(grid.order());
      const double rho = p.sparsity();
      const double s2 = p.variance();
      double acc = 0.0;
      if (rho < 1.0)
        acc += (1.0 - rho) *
               gauss_expect(dense, [&](double n) { return f(0.0, posterior_mean(ch, noise_sd * n)); });
      if (rho > 0.0) {
        // Active component: y ~ N(0, s2 + eta), then x0 | y ~ N(g y, g eta).
        const auto axis = slab_axis(s2, eta, grid.order());
        const double gain = s2 / (s2 + eta);
        const double post_sd = std::sqrt(gain * eta);
        double num = 0.0;
        double den = 0.0;
        for (long i = -axis.half; i <= axis.half; ++i) {
          const double t = static_cast<double>(i) * axis.step;
          const double w = std::exp(-0.5 * t * t);
          const double y = axis.y_sd * t;
          const double xhat = posterior_mean(ch, y);
          num += w * gauss_expect(grid, [&](double u) { return f(gain * y + post_sd * u, xhat); });
          den += w;
        }
        acc += rho * num / den;
      }
      return acc;
    }
  }
  return 0.0;
}

}  // namespace

double posterior_mean(const SisoChannel& ch, double y) {
  const Prior& p = ch.prior();
  const double eta = ch.eta();
  switch (p.kind()) {
    case Prior::Kind::discrete:
      return discrete_posterior_mean(p.atoms(), y, eta);
    case Prior::Kind::gaussian:
      return (p.variance() * y + eta * p.location()) / (p.variance() + eta);
    case Prior::Kind::bernoulli_gaussian: {
      const double rho = p.sparsity();
      const double s2 = p.variance();
      const double gain = s2 / (s2 + eta);
      if (rho <= 0.0) return 0.0;
      if (rho >= 1.0) return gain * y;
      // Posterior probability that the component is active.
      const double log_on = std::log(rho) + log_normal_pdf(y, s2 + eta);
      const double log_off = std::log1p(-rho) + log_normal_pdf(y, eta);
      const double active = 1.0 / (1.0 + std::exp(log_off - log_on));
      return active * gain * y;
    }
  }
  return 0.0;
}

double posterior_variance(const SisoChannel& ch, double y) {
  const Prior& p = ch.prior();
  const double eta = ch.eta();
  switch (p.kind()) {
    case Prior::Kind::discrete:
      return discrete_posterior(p.atoms(), y, eta).variance;
    case Prior::Kind::gaussian:
      return p.variance() * eta / (p.variance() + eta);
    case Prior::Kind::bernoulli_gaussian: {
      const double rho = p.sparsity();
      const double s2 = p.variance();
      const double gain = s2 / (s2 + eta);
      if (rho <= 0.0) return 0.0;
      if (rho >= 1.0) return gain * eta;
      const double log_on = std::log(rho) + log_normal_pdf(y, s2 + eta);
      const double log_off = std::log1p(-rho) + log_normal_pdf(y, eta);
      const double active = 1.0 / (1.0 + std::exp(log_off - log_on));
      const double inactive = 1.0 / (1.0 + std::exp(log_on - log_off));
      return active * gain * eta + active * inactive * gain * gain * y * y;
    }
  }
  return 0.0;
}

double estimate_power(const SisoChannel& ch, const HermiteGrid& grid) {
  return siso_expect(ch, grid, [](double, double xhat) { return xhat * xhat; });
}

double scalar_mmse(const SisoChannel& ch, const HermiteGrid& grid) {
  const Prior& p = ch.prior();
  const double eta = ch.eta();
  const double noise_sd = std::sqrt(eta);
  switch (p.kind()) {
    case Prior::Kind::discrete: {
      const HermiteGrid& dense = dense_grid(grid.order());
      double acc = 0.0;
      for (const auto& a : p.atoms()) {
        if (a.weight <= 0.0) continue;
        acc += a.weight * gauss_expect(dense, [&](double n) {
                 return posterior_variance(ch, a.value + noise_sd * n);
               });
      }
      return acc;
    }
    case Prior::Kind::gaussian:
      return posterior_variance(ch, 0.0);
    case Prior::Kind::bernoulli_gaussian: {
      const double rho = p.sparsity();
      double acc = 0.0;
      if (rho < 1.0)
        acc += (1.0 - rho) * gauss_expect(dense_grid(grid.order()), [&](double n) {
                 return posterior_variance(ch, noise_sd * n);
               });
      if (rho > 0.0) {
        const auto axis = slab_axis(p.variance(), eta, grid.order());
        double num = 0.0;
        double den = 0.0;
        for (long i = -axis.half; i <= axis.half; ++i) {
          const double t = static_cast<double>(i) * axis.step;
          const double w = std::exp(-0.5 * t * t);
          num += w * posterior_variance(ch, axis.y_sd * t);
          den += w;
        }
        acc += rho * num / den;
      }
      return acc;
    }
  }
  return 0.0;
}

double siso_joint_moment(const SisoChannel& ch, int i, int j, const HermiteGrid& grid) {
  if (i < 0 || j < 0 || i + j > 8)
    throw std::invalid_argument("siso_joint_moment: need i, j >= 0 and i + j <= 8");
  return siso_expect(ch, grid, [i, j](double x0, double xhat) {
    return std::pow(x0, i) * std::pow(xhat, j);
  });
}

double qpsk_mse_closed_form(double d_tilde, const HermiteGrid& grid) {
  if (!(d_tilde > 0.0) || !std::isfinite(d_tilde))
    throw std::invalid_argument("qpsk_mse_closed_form: d_tilde must be finite and > 0");
  const double shift = 2.0 * d_tilde;
  const double scale = std::sqrt(2.0 * d_tilde);
  return 1.0 - gauss_expect(dense_grid(grid.order()),
                             [&](double z) { return std::tanh(shift + scale * z); });
}

double q_function(double x) { return normal_sf(x); }

double mse_to_ser_qpsk(double snr_arg) {
  if (std::isnan(snr_arg) || snr_arg < 0.0)
    throw std::invalid_argument("mse_to_ser_qpsk: argument must be >= 0");
  if (std::isinf(snr_arg)) return 0.0;
  const double q = q_function(std::sqrt(snr_arg));
  return 2.0 * q - q * q;
}

}  // namespace mlglm
