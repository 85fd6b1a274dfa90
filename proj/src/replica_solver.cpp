#include "mlglm/replica_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "mlglm/scalar_estimators.hpp"

namespace mlglm {

namespace {

constexpr double kDTildeMin = 1e-12;
constexpr double kDTildeMax = 1e12;
constexpr double kGapFloor = 1e-12;
// d is kept at most T (1 - kMinGapFraction).
constexpr double kMinGapFraction = 1e-9;
// Quantizer outcomes rarer than this are dropped from posterior sums.
constexpr double kNegligibleMass = 1e-280;

double relative_change(double updated, double old) {
  return std::abs(updated - old) / (std::abs(old) + 1e-12);
}

double clamp_d(double d, double T) { return std::clamp(d, 0.0, T * (1.0 - kMinGapFraction)); }

double eta_from_d_tilde(double d_tilde) { return std::max(kMinEta, 1.0 / (2.0 * d_tilde)); }

// Level probabilities and E[z | level] - m for z ~ N(m, v) through a quantizer.
struct QuantizerPosterior {
  std::vector<double> prob;
  std::vector<double> z_offset;
};

QuantizerPosterior quantizer_posterior(const Activation& act, double m, double v) {
  const auto levels = act.levels();
  const auto thresholds = act.thresholds();
  const std::size_t K = levels.size();
  QuantizerPosterior out{std::vector<double>(K, 0.0), std::vector<double>(K, 0.0)};
  const double spread = v + act.pre_noise_variance();
  if (spread < kDiracVariance) {
    const auto it = std::upper_bound(thresholds.begin(), thresholds.end(), m);
    out.prob[static_cast<std::size_t>(it - thresholds.begin())] = 1.0;
    return out;
  }
  const double r = std::sqrt(spread);
  for (std::size_t k = 0; k < K; ++k) {
    const double lo = k == 0 ? -INFINITY : (thresholds[k - 1] - m) / r;
    const double hi = k + 1 == K ? INFINITY : (thresholds[k] - m) / r;
    const double p = normal_interval(lo, hi);
    if (p < kNegligibleMass) continue;
    const double pdf_lo = std::isinf(lo) ? 0.0 : normal_pdf(lo);
    const double pdf_hi = std::isinf(hi) ? 0.0 : normal_pdf(hi);
    out.prob[k] = p;
    out.z_offset[k] = (v / r) * (pdf_lo - pdf_hi) / p;
  }
  return out;
}

// Outer xi rule for a layer whose pre-activation mean is scale * xi. A
// quantizer makes the integrand a smoothed step of width
// sqrt(v + pre-noise) / scale at each threshold; Hermite nodes handle widths
// of order one, narrower steps get the graded rule.
const HermiteGrid& outer_rule(const Activation& act, double scale, double v,
                              const HermiteGrid& grid, std::optional<HermiteGrid>& storage) {
  if (act.is_gaussian() || !(scale > 0.0)) return grid;
  const double width = std::sqrt(v + act.pre_noise_variance()) / scale;
  if (width >= 1.0) return grid;
  std::vector<double> breakpoints;
  for (double t : act.thresholds()) breakpoints.push_back(t / scale);
  storage.emplace(make_graded_grid(breakpoints, std::max(width, 1e-12), grid.order()));
  return *storage;
}

void require_layer(const NetworkSpec& net, const ReplicaState& state) {
  if (state.depth() != net.depth() || state.d.size() != net.depth() ||
      state.q.size() != net.depth() || state.d_tilde.size() != net.depth())
    throw std::invalid_argument("ReplicaState depth does not match the network");
}

}  // namespace

ReplicaState ReplicaState::zeros(std::size_t depth) {
  return {std::vector<double>(depth, 0.0), std::vector<double>(depth, 0.0),
          std::vector<double>(depth, 0.0), std::vector<double>(depth, kDTildeMin)};
}

void SolverOptions::validate() const {
  if (!(damping >= 0.0 && damping < 1.0)) throw std::invalid_argument("damping must lie in [0, 1)");
  if (!(tol > 0.0)) throw std::invalid_argument("tol must be > 0");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  if (grid_order < 2 || grid_order > 512)
    throw std::invalid_argument("grid_order must lie in [2, 512]");
  if (init == InitStyle::warm && !warm_state)
    throw std::invalid_argument("warm init requires a warm_state");
  if (init == InitStyle::multi_start && start_fractions.empty())
    throw std::invalid_argument("multi_start init requires start_fractions");
}

// ---------------------------------------------------------------------------
// Layer kernels

LayerPosteriorPower layer_posterior_power(const Activation& act, double m, double v, double eta,
                                          const HermiteGrid& grid) {
  if (act.is_gaussian()) {
    // zeta = z + N(0, sigma^2 + eta): jointly Gaussian with z and x.
    const double s2 = act.noise_variance();
    const double total = v + s2 + eta;
    if (total <= 0.0) return {m * m, m * m, 0.0, 0.0};
    const double z_gain = v * v / total;
    const double x_gain = (v + s2) * (v + s2) / total;
    return {m * m + z_gain, m * m + x_gain, z_gain, (v + s2) * eta / total};
  }

  const auto post = quantizer_posterior(act, m, v);
  const auto levels = act.levels();
  const std::size_t K = levels.size();
  LayerPosteriorPower out{0.0, 0.0, 0.0, 0.0};
  if (eta < kDiracVariance) {
    for (std::size_t k = 0; k < K; ++k) {
      const double z_hat = m + post.z_offset[k];
      out.z_power += post.prob[k] * z_hat * z_hat;
      out.z_gain += post.prob[k] * post.z_offset[k] * post.z_offset[k];
      out.x_power += post.prob[k] * levels[k] * levels[k];
    }
    return out;
  }

  std::vector<double> log_prior(K, -INFINITY);
  for (std::size_t k = 0; k < K; ++k)
    if (post.prob[k] > 0.0) log_prior[k] = std::log(post.prob[k]);
  const double noise_sd = std::sqrt(eta);
  std::vector<double> logw(K);
  // The posterior weights are logistic in the noise, so use the dense rule.
  const HermiteGrid& dense = dense_grid(grid.order());
  const auto nodes = dense.nodes();
  const auto weights = dense.weights();
  for (std::size_t j = 0; j < K; ++j) {
    if (post.prob[j] <= 0.0) continue;
    double z_power = 0.0;
    double z_gain = 0.0;
    double x_power = 0.0;
    double x_error = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double zeta = levels[j] + noise_sd * nodes[i];
      std::size_t top = 0;
      for (std::size_t k = 0; k < K; ++k) {
        logw[k] = log_prior[k] - (zeta - levels[k]) * (zeta - levels[k]) / (2.0 * eta);
        if (logw[k] > logw[top]) top = k;
      }
      // Moments of x are taken about the most likely level so that a
      // concentrated posterior keeps its small variance.
      double norm = 0.0;
      double z_off = 0.0;
      double x_shift = 0.0;
      double x_second = 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        if (post.prob[k] <= 0.0) continue;
        const double w = k == top ? 1.0 : std::exp(logw[k] - logw[top]);
        const double dx = levels[k] - levels[top];
        norm += w;
        z_off += w * post.z_offset[k];
        x_shift += w * dx;
        x_second += w * dx * dx;
      }
      z_off /= norm;
      x_shift /= norm;
      const double z_hat = m + z_off;
      const double x_hat = levels[top] + x_shift;
      z_power += weights[i] * z_hat * z_hat;
      z_gain += weights[i] * z_off * z_off;
      x_power += weights[i] * x_hat * x_hat;
      x_error += weights[i] * std::max(0.0, x_second / norm - x_shift * x_shift);
    }
    out.z_power += post.prob[j] * z_power;
    out.z_gain += post.prob[j] * z_gain;
    out.x_power += post.prob[j] * x_power;
    out.x_error += post.prob[j] * x_error;
  }
  return out;
}

double z_posterior_mean(const Activation& act, double y, double m, double v) {
  if (act.is_gaussian()) {
    const double total = v + act.noise_variance();
    if (total < kDiracVariance) return y;
    return m + v / total * (y - m);
  }
  const auto post = quantizer_posterior(act, m, v);
  return m + post.z_offset[act.level_index(y)];
}

double activation_power(const Activation& act, double z_var) {
  if (act.is_gaussian()) return z_var + act.noise_variance();
  const auto post = quantizer_posterior(act, 0.0, z_var);
  const auto levels = act.levels();
  double acc = 0.0;
  for (std::size_t k = 0; k < levels.size(); ++k) acc += post.prob[k] * levels[k] * levels[k];
  return acc;
}

// ---------------------------------------------------------------------------
// Update equations

std::vector<double> forward_power_sweep(const NetworkSpec& net, const HermiteGrid&) {
  std::vector<double> T(net.depth());
  T[0] = net.prior().second_moment();
  for (std::size_t l = 1; l < net.depth(); ++l) {
    const auto& prev = net.layer(l - 1);
    T[l] = activation_power(prev.activation, T[l - 1] / prev.alpha);
    if (!std::isfinite(T[l]))
      throw std::domain_error("activation of layer " + std::to_string(l - 1) +
                              " has no finite second moment");
  }
  return T;
}

namespace {

// Internal forms of the updates. Each layer is described by d and the gap
// T - d, both computed directly: d sets the known part of z, the gap its
// unknown part, and either may be too small to recover from the other.

// E[(E[z | y, xi] - m)^2] for the last layer; q = d / alpha + this.
double last_layer_gain(const Layer& layer, double d, double gap, const HermiteGrid& grid) {
  const double scale = std::sqrt(std::max(d, 0.0) / layer.alpha);
  const double v = gap / layer.alpha;
  const Activation& act = layer.activation;
  if (act.is_gaussian()) {
    const double total = v + act.noise_variance();
    return total < kDiracVariance ? v : v * v / total;
  }
  std::optional<HermiteGrid> storage;
  const HermiteGrid& outer = outer_rule(act, scale, v, grid, storage);
  return gauss_expect(outer, [&](double xi) {
    const auto post = quantizer_posterior(act, scale * xi, v);
    double acc = 0.0;
    for (std::size_t k = 0; k < post.prob.size(); ++k)
      acc += post.prob[k] * post.z_offset[k] * post.z_offset[k];
    return acc;
  });
}

// The scalar channel shared by q[l] and d[l+1]; `downstream` is d_tilde[l+1].
LayerPosteriorPower middle_channel(const Layer& layer, double d, double gap, double downstream,
                                   const HermiteGrid& grid) {
  if (!(downstream > 0.0)) throw std::domain_error("middle layer: d_tilde must be > 0");
  const double scale = std::sqrt(std::max(d, 0.0) / layer.alpha);
  const double v = gap / layer.alpha;
  const double eta = 1.0 / (2.0 * downstream);
  LayerPosteriorPower acc{0.0, 0.0, 0.0, 0.0};
  std::optional<HermiteGrid> storage;
  const HermiteGrid& outer = outer_rule(layer.activation, scale, v, grid, storage);
  const auto nodes = outer.nodes();
  const auto weights = outer.weights();
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto p = layer_posterior_power(layer.activation, scale * nodes[i], v, eta, grid);
    acc.z_power += weights[i] * p.z_power;
    acc.x_power += weights[i] * p.x_power;
    acc.z_gain += weights[i] * p.z_gain;
    acc.x_error += weights[i] * p.x_error;
  }
  return acc;
}

// alpha (alpha q - d) / (2 gap^2) with alpha q - d = alpha * gain.
DTildeUpdate d_tilde_from_gain(double alpha, double gain, double gap) {
  if (gap < kGapFloor) return {kDTildeMax, true};
  const double value = alpha * alpha * gain / (2.0 * gap * gap);
  if (!(value <= kDTildeMax)) return {kDTildeMax, true};
  return {std::max(value, kDTildeMin), false};
}

double state_gap(const ReplicaState& state, std::size_t l, const char* who) {
  const double gap = state.T[l] - state.d[l];
  if (!(gap > 0.0)) throw std::domain_error(std::string(who) + ": requires d < T");
  return gap;
}

}  // namespace

double q_last_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state) {
  require_layer(net, state);
  const std::size_t l = net.depth() - 1;
  const auto& layer = net.layer(l);
  const double gap = state_gap(state, l, "q_last_layer");
  return state.d[l] / layer.alpha + last_layer_gain(layer, state.d[l], gap, grid);
}

double q_middle_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state,
                      std::size_t l) {
  require_layer(net, state);
  if (l + 1 >= net.depth()) throw std::out_of_range("q_middle_layer: l must be < L-1");
  const auto& layer = net.layer(l);
  const double gap = state_gap(state, l, "q_middle_layer");
  return state.d[l] / layer.alpha +
         middle_channel(layer, state.d[l], gap, state.d_tilde[l + 1], grid).z_gain;
}

double d_middle_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state,
                      std::size_t l) {
  require_layer(net, state);
  if (l == 0 || l >= net.depth()) throw std::out_of_range("d_middle_layer: l must be in [1, L)");
  const double gap = state_gap(state, l - 1, "d_middle_layer");
  return middle_channel(net.layer(l - 1), state.d[l - 1], gap, state.d_tilde[l], grid).x_power;
}

DTildeUpdate d_tilde_update(const ReplicaState& state, std::size_t l, double alpha) {
  const double gap = state.T.at(l) - state.d.at(l);
  if (gap < kGapFloor) return {kDTildeMax, true};
  const double value = alpha * (alpha * state.q.at(l) - state.d.at(l)) / (2.0 * gap * gap);
  if (!(value <= kDTildeMax)) return {kDTildeMax, true};
  return {std::max(value, kDTildeMin), false};
}

double d_first_layer(const NetworkSpec& net, const HermiteGrid& grid, const ReplicaState& state) {
  require_layer(net, state);
  if (!(state.d_tilde[0] > 0.0)) throw std::domain_error("d_first_layer: d_tilde must be > 0");
  return estimate_power(SisoChannel(net.prior(), eta_from_d_tilde(state.d_tilde[0])), grid);
}

// ---------------------------------------------------------------------------
// Iteration

namespace {

double clamp_gap(double gap, double T) { return std::clamp(gap, T * kMinGapFraction, T); }

struct SweepOutcome {
  double residual = 0.0;
  bool saturated = false;
};

// One backward (q, d_tilde) sweep then one forward d sweep, in place. `gap`
// tracks T - d alongside s.d.
SweepOutcome sweep(const NetworkSpec& net, const HermiteGrid& grid, ReplicaState& s,
                   std::vector<double>& gap, double damping, bool first) {
  const std::size_t L = net.depth();
  SweepOutcome out;
  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = net.layer(l);
    const double gain =
        l + 1 == L ? last_layer_gain(layer, s.d[l], gap[l], grid)
                   : middle_channel(layer, s.d[l], gap[l], s.d_tilde[l + 1], grid).z_gain;
    s.q[l] = s.d[l] / layer.alpha + gain;
    const auto upd = d_tilde_from_gain(layer.alpha, gain, gap[l]);
    out.saturated = out.saturated || upd.saturated;
    if (first) {
      out.residual = INFINITY;
      s.d_tilde[l] = upd.value;
    } else {
      out.residual = std::max(out.residual, relative_change(upd.value, s.d_tilde[l]));
      s.d_tilde[l] = (1.0 - damping) * upd.value + damping * s.d_tilde[l];
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    double raw_d = 0.0;
    double raw_gap = 0.0;
    if (l == 0) {
      const SisoChannel ch(net.prior(), eta_from_d_tilde(s.d_tilde[0]));
      raw_d = estimate_power(ch, grid);
      raw_gap = scalar_mmse(ch, grid);
    } else {
      const auto p = middle_channel(net.layer(l - 1), s.d[l - 1], gap[l - 1], s.d_tilde[l], grid);
      raw_d = p.x_power;
      raw_gap = p.x_error;
    }
    if (raw_gap <= s.T[l] * kMinGapFraction) out.saturated = true;
    const double upd_d = clamp_d(raw_d, s.T[l]);
    const double upd_gap = clamp_gap(raw_gap, s.T[l]);
    out.residual = std::max(out.residual, relative_change(upd_d, s.d[l]));
    s.d[l] = clamp_d((1.0 - damping) * upd_d + damping * s.d[l], s.T[l]);
    gap[l] = clamp_gap((1.0 - damping) * upd_gap + damping * gap[l], s.T[l]);
  }
  return out;
}

struct RunOutcome {
  ReplicaState state;
  int iterations = 0;
  double residual = INFINITY;
  bool converged = false;
  bool saturated = false;
};

std::vector<double> gaps_of(const ReplicaState& s) {
  std::vector<double> gap(s.depth());
  for (std::size_t l = 0; l < s.depth(); ++l) gap[l] = clamp_gap(s.T[l] - s.d[l], s.T[l]);
  return gap;
}

RunOutcome run_from(const NetworkSpec& net, const HermiteGrid& grid, const SolverOptions& opts,
                    ReplicaState init, bool have_d_tilde) {
  RunOutcome r;
  r.state = std::move(init);
  auto gap = gaps_of(r.state);
  for (int it = 1; it <= opts.max_iter; ++it) {
    const auto o = sweep(net, grid, r.state, gap, opts.damping, it == 1 && !have_d_tilde);
    r.iterations = it;
    r.residual = o.residual;
    r.saturated = o.saturated;
    if (o.residual < opts.tol) {
      r.converged = true;
      break;
    }
  }
  return r;
}

ReplicaState initial_state(const std::vector<double>& T, double fraction) {
  auto s = ReplicaState::zeros(T.size());
  s.T = T;
  for (std::size_t l = 0; l < T.size(); ++l) s.d[l] = clamp_d(fraction * T[l], T[l]);
  return s;
}

bool same_fixed_point(const ReplicaState& a, const ReplicaState& b, double tol) {
  for (std::size_t l = 0; l < a.depth(); ++l) {
    if (relative_change(a.d[l], b.d[l]) > 10.0 * tol) return false;
    if (relative_change(a.d_tilde[l], b.d_tilde[l]) > 10.0 * tol) return false;
  }
  return true;
}

FixedPointSolution to_solution(const RunOutcome& r) {
  return {r.state, eta_from_d_tilde(r.state.d_tilde[0]), r.state.T[0] - r.state.d[0],
          r.converged};
}

FixedPointResult to_result(const RunOutcome& r) {
  FixedPointResult res;
  res.state = r.state;
  res.eta = eta_from_d_tilde(r.state.d_tilde[0]);
  res.avg_mse = r.state.T[0] - r.state.d[0];
  res.iterations = r.iterations;
  res.residual = r.residual;
  res.converged = r.converged;
  res.saturated = r.saturated;
  return res;
}

}  // namespace

double fixed_point_residual(const NetworkSpec& net, const HermiteGrid& grid,
                            const ReplicaState& state) {
  require_layer(net, state);
  ReplicaState copy = state;
  auto gap = gaps_of(copy);
  return sweep(net, grid, copy, gap, 0.0, false).residual;
}

FixedPointResult solve(const NetworkSpec& net, const SolverOptions& opts) {
  opts.validate();
  const HermiteGrid grid = make_grid(opts.grid_order);
  const auto T = forward_power_sweep(net, grid);

  if (opts.init == InitStyle::warm) {
    const auto& warm = *opts.warm_state;
    if (warm.depth() != net.depth() || warm.d.size() != net.depth() ||
        warm.d_tilde.size() != net.depth())
      throw std::invalid_argument("warm_state depth does not match the network");
    auto s = initial_state(T, 0.0);
    for (std::size_t l = 0; l < net.depth(); ++l) {
      s.d[l] = clamp_d(warm.d[l], T[l]);
      s.d_tilde[l] = std::clamp(warm.d_tilde[l], kDTildeMin, kDTildeMax);
    }
    auto res = to_result(run_from(net, grid, opts, std::move(s), true));
    res.all_solutions.push_back({res.state, res.eta, res.avg_mse, res.converged});
    return res;
  }

  std::vector<double> fractions = {1e-3};
  if (opts.init == InitStyle::multi_start) fractions = opts.start_fractions;

  FixedPointResult result;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto run = run_from(net, grid, opts, initial_state(T, fractions[i]), false);
    if (i == 0) result = to_result(run);
    if (!run.converged) continue;
    const bool seen = std::any_of(
        result.all_solutions.begin(), result.all_solutions.end(),
        [&](const FixedPointSolution& s) { return same_fixed_point(s.state, run.state, opts.tol); });
    if (!seen) result.all_solutions.push_back(to_solution(run));
  }
  return result;
}

FixedPointResult solve_slm(const Prior& prior, double sigma_w2, double alpha,
                           const SolverOptions& opts) {
  opts.validate();
  if (!(sigma_w2 >= 0.0) || !std::isfinite(sigma_w2))
    throw std::invalid_argument("solve_slm: sigma_w2 must be >= 0");
  if (!(alpha > 0.0) || !std::isfinite(alpha))
    throw std::invalid_argument("solve_slm: alpha must be > 0");
  const HermiteGrid grid = make_grid(opts.grid_order);
  const double T = prior.second_moment();

  double d0 = 1e-3 * T;
  if (opts.init == InitStyle::warm && opts.warm_state && !opts.warm_state->d.empty())
    d0 = clamp_d(opts.warm_state->d[0], T);
  double eta = std::max(kMinEta, sigma_w2 + (T - d0) / alpha);

  FixedPointResult res;
  res.residual = INFINITY;
  for (int it = 1; it <= opts.max_iter; ++it) {
    const double upd =
        std::max(kMinEta, sigma_w2 + scalar_mmse(SisoChannel(prior, eta), grid) / alpha);
    res.iterations = it;
    res.residual = relative_change(upd, eta);
    eta = (1.0 - opts.damping) * upd + opts.damping * eta;
    if (res.residual < opts.tol) {
      res.converged = true;
      break;
    }
  }

  auto s = ReplicaState::zeros(1);
  s.T[0] = T;
  s.d[0] = clamp_d(T - scalar_mmse(SisoChannel(prior, eta), grid), T);
  s.d_tilde[0] = 1.0 / (2.0 * eta);
  const double gap = T - s.d[0];
  s.q[0] = (2.0 * s.d_tilde[0] * gap * gap / alpha + s.d[0]) / alpha;
  res.state = s;
  res.eta = eta;
  res.avg_mse = T - s.d[0];
  res.all_solutions.push_back({s, eta, res.avg_mse, res.converged});
  return res;
}

}  // namespace mlglm
