#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace mlglm {

using Rng = std::mt19937_64;

struct Atom {
  double value;
  double weight;
};

/// Scalar input law P_X. Immutable once built through one of the factories.
class Prior {
 public:
  enum class Kind { discrete, gaussian, bernoulli_gaussian };

  static Prior discrete(std::vector<Atom> atoms);
  static Prior gaussian(double mean, double variance);
  /// Zero with probability 1 - sparsity, N(0, component_variance) otherwise.
  static Prior bernoulli_gaussian(double sparsity, double component_variance);

  Kind kind() const { return kind_; }
  std::span<const Atom> atoms() const { return atoms_; }
  double location() const { return location_; }
  double variance() const { return variance_; }
  double sparsity() const { return sparsity_; }

  double mean() const;
  double second_moment() const;
  bool is_two_atom() const { return kind_ == Kind::discrete && atoms_.size() == 2; }

  double sample(Rng& rng) const;

 private:
  Prior() = default;

  Kind kind_ = Kind::gaussian;
  std::vector<Atom> atoms_;
  double location_ = 0.0;
  double variance_ = 1.0;
  double sparsity_ = 1.0;
};

double prior_second_moment(const Prior& p);

/// Per-layer conditional law P(x_out | z).
///
/// Discrete kinds are quantizers: output level k is emitted when
/// z + e falls in [t_{k-1}, t_k), with e ~ N(0, pre_noise_variance),
/// t_0 = -inf and t_K = +inf. `sign` is the two-level quantizer at 0, so
/// sign with pre-noise is the probit channel P(+1|z) = Phi(z / sigma_pre).
class Activation {
 public:
  enum class Kind { awgn, identity, sign, discrete_map };

  static Activation awgn(double variance);
  static Activation identity();
  static Activation sign(double pre_noise_variance = 0.0);
  /// `levels` strictly increasing, `thresholds` strictly increasing with
  /// thresholds.size() == levels.size() - 1. A single level gives a channel
  /// that carries no information about z.
  static Activation discrete_map(std::vector<double> levels, std::vector<double> thresholds,
                                 double pre_noise_variance = 0.0);

  Kind kind() const { return kind_; }
  bool is_gaussian() const { return kind_ == Kind::awgn || kind_ == Kind::identity; }
  bool is_discrete() const { return !is_gaussian(); }

  /// Output noise variance for the Gaussian kinds (0 for identity).
  double noise_variance() const { return noise_variance_; }
  double pre_noise_variance() const { return pre_noise_variance_; }
  std::span<const double> levels() const { return levels_; }
  std::span<const double> thresholds() const { return thresholds_; }

  /// Index of x_out in the output alphabet; throws std::invalid_argument if
  /// x_out is not a level. Discrete kinds only.
  std::size_t level_index(double x_out) const;

  /// P(level k | z) for discrete kinds.
  double level_probability(std::size_t k, double z) const;

  /// Density (Gaussian kinds) or probability mass (discrete kinds).
  /// Identity has no density; it is reported as the awgn density with the
  /// variance floor so that limits stay finite.
  double conditional_density(double x_out, double z) const;

  double conditional_mean(double z) const;
  double conditional_variance(double z) const;

  double sample(double z, Rng& rng) const;

 private:
  Activation() = default;

  Kind kind_ = Kind::identity;
  double noise_variance_ = 0.0;
  double pre_noise_variance_ = 0.0;
  std::vector<double> levels_;
  std::vector<double> thresholds_;
};

double conditional_density(const Activation& a, double x_out, double z);
double sample_activation(const Activation& a, double z, Rng& rng);

struct Layer {
  double alpha;
  Activation activation;
};

/// The full multi-layer GLM: prior plus ordered (alpha, activation) layers.
class NetworkSpec {
 public:
  NetworkSpec(Prior prior, std::vector<Layer> layers);

  const Prior& prior() const { return prior_; }
  std::span<const Layer> layers() const { return layers_; }
  std::size_t depth() const { return layers_.size(); }
  const Layer& layer(std::size_t l) const { return layers_.at(l); }

  NetworkSpec with_prior(Prior p) const;
  NetworkSpec with_layer(std::size_t l, Layer layer) const;

 private:
  Prior prior_;
  std::vector<Layer> layers_;
};

// Standard normal helpers shared by the other modules.
double normal_pdf(double x);
double normal_cdf(double x);
/// Upper tail Q(x) = 1 - Phi(x), accurate in the far tail.
double normal_sf(double x);
/// Phi(b) - Phi(a) for a <= b without cancellation on either tail.
double normal_interval(double a, double b);

}  // namespace mlglm
