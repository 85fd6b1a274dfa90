#include "mlglm/channels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace mlglm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kVarianceFloor = 1e-12;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool strictly_increasing(const std::vector<double>& v) {
  return std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
}

}  // namespace

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_sf(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double normal_interval(double a, double b) {
  if (a >= b) return 0.0;
  if (a >= 0.0) return normal_sf(a) - normal_sf(b);
  if (b <= 0.0) return normal_cdf(b) - normal_cdf(a);
  return 1.0 - normal_cdf(a) - normal_sf(b);
}

// ---------------------------------------------------------------------------
// Prior

Prior Prior::discrete(std::vector<Atom> atoms) {
  require(!atoms.empty(), "discrete prior needs at least one atom");
  double total = 0.0;
  for (const auto& a : atoms) {
    require(std::isfinite(a.value), "discrete prior atom value must be finite");
    require(a.weight >= 0.0 && std::isfinite(a.weight), "discrete prior weights must be >= 0");
    total += a.weight;
  }
  require(std::abs(total - 1.0) <= 1e-12, "discrete prior weights must sum to 1");
  Prior p;
  p.kind_ = Kind::discrete;
  p.atoms_ = std::move(atoms);
  return p;
}

Prior Prior::gaussian(double mean, double variance) {
  require(std::isfinite(mean), "gaussian prior mean must be finite");
  require(variance >= 0.0 && std::isfinite(variance), "gaussian prior variance must be >= 0");
  Prior p;
  p.kind_ = Kind::gaussian;
  p.location_ = mean;
  p.variance_ = variance;
  return p;
}

Prior Prior::bernoulli_gaussian(double sparsity, double component_variance) {
  require(sparsity >= 0.0 && sparsity <= 1.0, "sparsity must lie in [0, 1]");
  require(component_variance >= 0.0 && std::isfinite(component_variance),
          "component variance must be >= 0");
  Prior p;
  p.kind_ = Kind::bernoulli_gaussian;
  p.sparsity_ = sparsity;
  p.variance_ = component_variance;
  return p;
}

double Prior::mean() const {
  switch (kind_) {
    case Kind::discrete: {
      double m = 0.0;
      for (const auto& a : atoms_) m += a.weight * a.value;
      return m;
    }
    case Kind::gaussian:
      return location_;
    case Kind::bernoulli_gaussian:
      return 0.0;
  }
  return 0.0;
}

double Prior::second_moment() const {
  switch (kind_) {
    case Kind::discrete: {
      double m2 = 0.0;
      for (const auto& a : atoms_) m2 += a.weight * a.value * a.value;
      return m2;
    }
    case Kind::gaussian:
      return location_ * location_ + variance_;
    case Kind::bernoulli_gaussian:
      return sparsity_ * variance_;
  }
  return 0.0;
}

double Prior::sample(Rng& rng) const {
  switch (kind_) {
    case Kind::discrete: {
      double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
      for (const auto& a : atoms_) {
        if (u < a.weight) return a.value;
        u -= a.weight;
      }
      return atoms_.back().value;
    }
    case Kind::gaussian:
      return location_ + std::sqrt(variance_) * std::normal_distribution<double>()(rng);
    case Kind::bernoulli_gaussian: {
      const bool active = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < sparsity_;
      const double g = std::normal_distribution<double>()(rng);
      return active ? std::sqrt(variance_) * g : 0.0;
    }
  }
  return 0.0;
}

double prior_second_moment(const Prior& p) { return p.second_moment(); }

// ---------------------------------------------------------------------------
// Activation

Activation Activation::awgn(double variance) {
  require(variance >= 0.0 && std::isfinite(variance), "awgn variance must be >= 0");
  Activation a;
  a.kind_ = Kind::awgn;
  a.noise_variance_ = variance;
  return a;
}

Activation Activation::identity() {
  Activation a;
  a.kind_ = Kind::identity;
  return a;
}

Activation Activation::sign(double pre_noise_variance) {
  Activation a = discrete_map({-1.0, 1.0}, {0.0}, pre_noise_variance);
  a.kind_ = Kind::sign;
  return a;
}

Activation Activation::discrete_map(std::vector<double> levels, std::vector<double> thresholds,
                                    double pre_noise_variance) {
  require(!levels.empty(), "discrete_map needs at least one output level");
  require(thresholds.size() + 1 == levels.size(),
          "discrete_map needs exactly levels-1 thresholds");
  require(strictly_increasing(levels), "discrete_map levels must be strictly increasing");
  require(strictly_increasing(thresholds), "discrete_map thresholds must be strictly increasing");
  for (double v : levels) require(std::isfinite(v), "discrete_map levels must be finite");
  for (double t : thresholds) require(std::isfinite(t), "discrete_map thresholds must be finite");
  require(pre_noise_variance >= 0.0 && std::isfinite(pre_noise_variance),
          "pre-noise variance must be >= 0");
  Activation a;
  a.kind_ = Kind::discrete_map;
  a.levels_ = std::move(levels);
  a.thresholds_ = std::move(thresholds);
  a.pre_noise_variance_ = pre_noise_variance;
  return a;
}

std::size_t Activation::level_index(double x_out) const {
  require(is_discrete(), "level_index on a continuous activation");
  for (std::size_t k = 0; k < levels_.size(); ++k) {
    if (std::abs(levels_[k] - x_out) <= 1e-12 * (1.0 + std::abs(x_out))) return k;
  }
  throw std::invalid_argument("output " + std::to_string(x_out) +
                              " is not in the activation's output alphabet");
}

double Activation::level_probability(std::size_t k, double z) const {
  const double lo = k == 0 ? -kInf : thresholds_[k - 1];
  const double hi = k + 1 == levels_.size() ? kInf : thresholds_[k];
  if (pre_noise_variance_ <= 0.0) return (z >= lo && z < hi) ? 1.0 : 0.0;
  const double s = std::sqrt(pre_noise_variance_);
  return normal_interval((lo - z) / s, (hi - z) / s);
}

double Activation::conditional_density(double x_out, double z) const {
  if (is_discrete()) return level_probability(level_index(x_out), z);
  const double var = std::max(noise_variance_, kVarianceFloor);
  return normal_pdf((x_out - z) / std::sqrt(var)) / std::sqrt(var);
}

double Activation::conditional_mean(double z) const {
  if (is_gaussian()) return z;
  double m = 0.0;
  for (std::size_t k = 0; k < levels_.size(); ++k) m += levels_[k] * level_probability(k, z);
  return m;
}

double Activation::conditional_variance(double z) const {
  if (is_gaussian()) return noise_variance_;
  const double m = conditional_mean(z);
  double v = 0.0;
  for (std::size_t k = 0; k < levels_.size(); ++k)
    v += (levels_[k] - m) * (levels_[k] - m) * level_probability(k, z);
  return v;
}

double Activation::sample(double z, Rng& rng) const {
  switch (kind_) {
    case Kind::identity:
      return z;
    case Kind::awgn:
      return noise_variance_ > 0.0
                 ? z + std::sqrt(noise_variance_) * std::normal_distribution<double>()(rng)
                 : z;
    case Kind::sign:
    case Kind::discrete_map: {
      double zn = z;
      if (pre_noise_variance_ > 0.0)
        zn += std::sqrt(pre_noise_variance_) * std::normal_distribution<double>()(rng);
      const auto it = std::upper_bound(thresholds_.begin(), thresholds_.end(), zn);
      return levels_[static_cast<std::size_t>(it - thresholds_.begin())];
    }
  }
  return z;
}

double conditional_density(const Activation& a, double x_out, double z) {
  return a.conditional_density(x_out, z);
}

double sample_activation(const Activation& a, double z, Rng& rng) { return a.sample(z, rng); }

// ---------------------------------------------------------------------------
// NetworkSpec

NetworkSpec::NetworkSpec(Prior prior, std::vector<Layer> layers)
    : prior_(std::move(prior)), layers_(std::move(layers)) {
  require(!layers_.empty(), "network needs at least one layer");
  for (const auto& l : layers_)
    require(std::isfinite(l.alpha) && l.alpha > 0.0, "layer alpha must be finite and positive");
}

NetworkSpec NetworkSpec::with_prior(Prior p) const { return NetworkSpec(std::move(p), layers_); }

NetworkSpec NetworkSpec::with_layer(std::size_t l, Layer layer) const {
  auto layers = layers_;
  layers.at(l) = std::move(layer);
  return NetworkSpec(prior_, std::move(layers));
}

}  // namespace mlglm
