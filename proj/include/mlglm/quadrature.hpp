#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlglm/channels.hpp"

namespace mlglm {

inline constexpr int kDefaultGridOrder = 64;
/// Gaussian kernels narrower than this are replaced by their Dirac limit.
inline constexpr double kDiracVariance = 1e-12;

/// Gauss-Hermite rule for the standard normal measure D(xi) = N(xi|0,1) dxi.
class HermiteGrid {
 public:
  HermiteGrid(std::vector<double> nodes, std::vector<double> weights);

  int order() const { return static_cast<int>(nodes_.size()); }
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> weights() const { return weights_; }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// Builds the rule by eigendecomposition of the Jacobi matrix, then polishes
/// nodes by Newton steps and takes weights from the Christoffel sum.
/// Throws std::invalid_argument unless 2 <= order <= 512.
HermiteGrid make_grid(int order);

/// Process-wide grid of kDefaultGridOrder.
const HermiteGrid& default_grid();

/// Uniform trapezoid rule for D(xi) on [-12, 12] with spacing 3.2 / order
/// (481 nodes at order 64).
///
/// Used on noise axes whose integrand is a posterior mean over discrete
/// hypotheses (tanh-like, with poles close to the real axis). Gauss-Hermite
/// of the same order leaves errors near 1e-6 there; the trapezoid rule
/// converges geometrically in 1 / spacing for such integrands.
HermiteGrid make_dense_grid(int order);

/// Cached make_dense_grid; safe to call concurrently.
const HermiteGrid& dense_grid(int order);

/// Composite Gauss-Legendre rule for D(xi) on [-9, 9], graded toward each
/// breakpoint: panel edges sit at b +- width * 2.5^k, plus a background of
/// panels no wider than 2. Each panel carries max(4, order / 6) nodes.
///
/// Used on outer axes where a quantizer turns the integrand into a smoothed
/// step of the given width around each breakpoint.
HermiteGrid make_graded_grid(std::span<const double> breakpoints, double width, int order);

class NonFiniteIntegrand : public std::runtime_error {
 public:
  explicit NonFiniteIntegrand(double node)
      : std::runtime_error("integrand is not finite at node " + std::to_string(node)),
        node_(node) {}
  double node() const { return node_; }

 private:
  double node_;
};

/// Sum_i w_i f(xi_i).
template <class F>
double gauss_expect(const HermiteGrid& grid, F&& f) {
  const auto x = grid.nodes();
  const auto w = grid.weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = f(x[i]);
    if (!std::isfinite(v)) throw NonFiniteIntegrand(x[i]);
    acc += w[i] * v;
  }
  return acc;
}

/// Tensor-product rule for independent standard normals (xi, zeta).
template <class F>
double gauss_expect_2d(const HermiteGrid& grid, F&& f) {
  return gauss_expect(grid, [&](double xi) {
    return gauss_expect(grid, [&](double zeta) { return f(xi, zeta); });
  });
}

/// E over xi ~ D(xi), v ~ N(mean_fn(xi), var), y ~ P(y|v) of f(xi, y).
///
/// Discrete outputs sum exactly over the alphabet using the closed-form
/// level probabilities of the Gaussian-smoothed quantizer. Gaussian outputs
/// use y = mean + sqrt(var + sigma^2) t with t on an extra Hermite axis.
template <class MeanFn, class F>
double gauss_expect_output(const HermiteGrid& grid, const Activation& channel, MeanFn&& mean_fn,
                           double var, F&& f) {
  if (!(var >= 0.0)) throw std::invalid_argument("gauss_expect_output: negative variance");
  if (channel.is_gaussian()) {
    const double sd = std::sqrt(var + channel.noise_variance());
    return gauss_expect_2d(grid, [&](double xi, double t) { return f(xi, mean_fn(xi) + sd * t); });
  }
  const auto levels = channel.levels();
  const auto thresholds = channel.thresholds();
  const double spread = var + channel.pre_noise_variance();
  return gauss_expect(grid, [&](double xi) {
    const double m = mean_fn(xi);
    double acc = 0.0;
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const double lo = k == 0 ? -INFINITY : thresholds[k - 1];
      const double hi = k + 1 == levels.size() ? INFINITY : thresholds[k];
      double p;
      if (spread < kDiracVariance) {
        p = (m >= lo && m < hi) ? 1.0 : 0.0;
      } else {
        const double s = std::sqrt(spread);
        p = normal_interval((lo - m) / s, (hi - m) / s);
      }
      if (p > 0.0) acc += p * f(xi, levels[k]);
    }
    return acc;
  });
}

template <class F>
double gauss_expect_output(const HermiteGrid& grid, const Activation& channel, double mean,
                           double var, F&& f) {
  return gauss_expect_output(
      grid, channel, [mean](double) { return mean; }, var, [&](double, double y) { return f(y); });
}

}  // namespace mlglm
