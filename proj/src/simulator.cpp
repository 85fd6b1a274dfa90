#include "mlglm/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "mlglm/quadrature.hpp"
#include "mlglm/scalar_estimators.hpp"

namespace mlglm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Neumaier-compensated running sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

struct MeanAndError {
  double mean;
  double std_error;
};

MeanAndError mean_and_error(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  CompensatedSum s;
  for (double x : v) s.add(x);
  const double mean = s.value() / static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  CompensatedSum ss;
  for (double x : v) ss.add((x - mean) * (x - mean));
  const double var = ss.value() / static_cast<double>(v.size() - 1);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

double log_sum_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

// Index of the first layer of the trailing run of awgn/identity layers.
std::size_t gaussian_tail_start(const NetworkSpec& spec) {
  std::size_t g = spec.depth();
  while (g > 0 && spec.layer(g - 1).activation.is_gaussian()) --g;
  return g;
}

std::string budget_text(std::size_t base, std::size_t n) {
  std::ostringstream os;
  os << base << "^" << n << " = " << std::pow(static_cast<double>(base), static_cast<double>(n))
     << " configurations, budget 2^20 = " << static_cast<long>(kOracleBudget);
  return os.str();
}

// Values of the enumerated variable x^(m): prior atoms for m = 0, the output
// levels of layer m-1 otherwise.
std::vector<double> alphabet(const NetworkSpec& spec, std::size_t m) {
  if (m == 0) {
    std::vector<double> out;
    for (const auto& a : spec.prior().atoms()) out.push_back(a.value);
    return out;
  }
  const auto levels = spec.layer(m - 1).activation.levels();
  return {levels.begin(), levels.end()};
}

std::size_t config_count(std::size_t base, std::size_t n) {
  std::size_t c = 1;
  for (std::size_t i = 0; i < n; ++i) c *= base;
  return c;
}

void decode(std::size_t c, std::size_t base, const std::vector<double>& values,
            Eigen::VectorXd& x, std::vector<std::size_t>& digits) {
  for (Eigen::Index a = 0; a < x.size(); ++a) {
    const std::size_t k = c % base;
    c /= base;
    digits[static_cast<std::size_t>(a)] = k;
    x(a) = values[k];
  }
}

// Product H_{to-1} ... H_from (identity of size dims[from] when to == from).
Eigen::MatrixXd chain(const FiniteNetwork& net, std::size_t from, std::size_t to) {
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(net.dims[from]),
                                                static_cast<Eigen::Index>(net.dims[from]));
  for (std::size_t l = from; l < to; ++l) A = net.matrices[l] * A;
  return A;
}

// Noise covariance accumulated by the Gaussian layers from..L-1 at the output.
Eigen::MatrixXd tail_noise(const FiniteNetwork& net, std::size_t from) {
  const std::size_t L = net.spec.depth();
  const auto M = static_cast<Eigen::Index>(net.dims[L]);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(M, M);
  for (std::size_t l = from; l < L; ++l) {
    const double s2 = net.spec.layer(l).activation.noise_variance();
    if (s2 == 0.0) continue;
    const Eigen::MatrixXd B = chain(net, l + 1, L);
    C += s2 * B * B.transpose();
  }
  // Noiseless paths keep a Dirac-width floor so the Cholesky factor exists.
  C.diagonal().array() += kDiracVariance;
  return C;
}

}  // namespace

// ---------------------------------------------------------------------------
// Networks and trials

std::vector<std::size_t> dims_for(const NetworkSpec& spec, std::size_t n_in) {
  std::vector<std::size_t> dims{n_in};
  for (const auto& layer : spec.layers())
    dims.push_back(static_cast<std::size_t>(std::llround(layer.alpha * static_cast<double>(dims.back()))));
  check_dims(spec, dims);
  return dims;
}

void check_dims(const NetworkSpec& spec, const std::vector<std::size_t>& dims) {
  if (dims.size() != spec.depth() + 1)
    throw std::invalid_argument("dims must have depth + 1 = " + std::to_string(spec.depth() + 1) +
                                " entries");
  for (std::size_t n : dims)
    if (n == 0) throw std::invalid_argument("dims must be positive");
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const double target = spec.layer(l).alpha * static_cast<double>(dims[l]);
    if (std::abs(static_cast<double>(dims[l + 1]) - target) > 0.5 + 1e-9)
      throw std::invalid_argument("dims[" + std::to_string(l + 1) + "] = " +
                                  std::to_string(dims[l + 1]) + " does not match alpha * dims[" +
                                  std::to_string(l) + "] = " + std::to_string(target));
  }
}

FiniteNetwork sample_network(const NetworkSpec& spec, std::vector<std::size_t> dims, Rng& rng) {
  check_dims(spec, dims);
  FiniteNetwork net{spec, std::move(dims), {}};
  for (std::size_t l = 0; l < spec.depth(); ++l) {
    const auto rows = static_cast<Eigen::Index>(net.dims[l + 1]);
    const auto cols = static_cast<Eigen::Index>(net.dims[l]);
    std::normal_distribution<double> entry(0.0, 1.0 / std::sqrt(static_cast<double>(rows)));
    Eigen::MatrixXd H(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) H(i, j) = entry(rng);
    net.matrices.push_back(std::move(H));
  }
  return net;
}

FiniteNetwork zero_network(const NetworkSpec& spec, std::vector<std::size_t> dims) {
  check_dims(spec, dims);
  FiniteNetwork net{spec, std::move(dims), {}};
  for (std::size_t l = 0; l < spec.depth(); ++l)
    net.matrices.push_back(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(net.dims[l + 1]),
                                                 static_cast<Eigen::Index>(net.dims[l])));
  return net;
}

Trial sample_trial(const FiniteNetwork& net, Rng& rng) {
  Trial t;
  t.x0.resize(static_cast<Eigen::Index>(net.dims[0]));
  for (Eigen::Index k = 0; k < t.x0.size(); ++k) t.x0(k) = net.spec.prior().sample(rng);
  Eigen::VectorXd x = t.x0;
  for (std::size_t l = 0; l < net.spec.depth(); ++l) {
    const Eigen::VectorXd z = net.matrices[l] * x;
    const auto& act = net.spec.layer(l).activation;
    x.resize(z.size());
    for (Eigen::Index a = 0; a < z.size(); ++a) x(a) = act.sample(z(a), rng);
  }
  t.y = std::move(x);
  return t;
}

Rng stream_rng(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

// ---------------------------------------------------------------------------
// Brute-force oracle

void check_brute_force(const NetworkSpec& spec, const std::vector<std::size_t>& dims) {
  check_dims(spec, dims);
  if (spec.prior().kind() != Prior::Kind::discrete)
    throw OracleInfeasible("brute-force oracle needs a discrete prior");
  const std::size_t K0 = spec.prior().atoms().size();
  if (std::pow(static_cast<double>(K0), static_cast<double>(dims[0])) > kOracleBudget)
    throw OracleInfeasible("x^(0) has " + budget_text(K0, dims[0]));
  const std::size_t L = spec.depth();
  const std::size_t g = gaussian_tail_start(spec);
  for (std::size_t l = 0; l < g; ++l)
    if (spec.layer(l).activation.is_gaussian())
      throw OracleInfeasible("layer " + std::to_string(l) +
                             " is awgn/identity but feeds a quantizer; no closed form");
  for (std::size_t m = 1; m <= std::min(g, L - 1); ++m) {
    const std::size_t K = spec.layer(m - 1).activation.levels().size();
    if (std::pow(static_cast<double>(K), static_cast<double>(dims[m])) > kOracleBudget)
      throw OracleInfeasible("x^(" + std::to_string(m) + ") has " + budget_text(K, dims[m]));
  }
}

Eigen::VectorXd exact_mmse_brute_force(const FiniteNetwork& net, const Eigen::VectorXd& y) {
  const NetworkSpec& spec = net.spec;
  check_brute_force(spec, net.dims);
  const std::size_t L = spec.depth();
  if (static_cast<std::size_t>(y.size()) != net.dims[L])
    throw std::invalid_argument("observation has the wrong dimension");
  const std::size_t g = gaussian_tail_start(spec);
  // x^(top) is the deepest enumerated variable.
  const std::size_t top = std::min(g, L - 1);

  // log P(y | x^(top)) for every configuration of x^(top).
  auto values = alphabet(spec, top);
  std::size_t base = values.size();
  std::size_t count = config_count(base, net.dims[top]);
  std::vector<double> log_like(count);
  {
    Eigen::VectorXd x(static_cast<Eigen::Index>(net.dims[top]));
    std::vector<std::size_t> digits(net.dims[top]);
    if (g < L) {
      // y | x^(g) ~ N(A x, C); whiten by the Cholesky factor of C.
      const Eigen::MatrixXd A = chain(net, g, L);
      const Eigen::LLT<Eigen::MatrixXd> llt(tail_noise(net, g));
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("brute-force oracle: output covariance is not positive definite");
      const Eigen::MatrixXd WA = llt.matrixL().solve(A);
      const Eigen::VectorXd Wy = llt.matrixL().solve(y);
      for (std::size_t c = 0; c < count; ++c) {
        decode(c, base, values, x, digits);
        log_like[c] = -0.5 * (Wy - WA * x).squaredNorm();
      }
    } else {
      const auto& act = spec.layer(L - 1).activation;
      std::vector<std::size_t> y_level(static_cast<std::size_t>(y.size()));
      for (Eigen::Index a = 0; a < y.size(); ++a)
        y_level[static_cast<std::size_t>(a)] = act.level_index(y(a));
      for (std::size_t c = 0; c < count; ++c) {
        decode(c, base, values, x, digits);
        const Eigen::VectorXd z = net.matrices[L - 1] * x;
        double acc = 0.0;
        for (Eigen::Index a = 0; a < z.size() && acc > kNegInf; ++a)
          acc += std::log(act.level_probability(y_level[static_cast<std::size_t>(a)], z(a)));
        log_like[c] = acc;
      }
    }
  }

  // Sum out x^(top), ..., x^(1) through the quantizer layers.
  for (std::size_t m = top; m-- > 0;) {
    const auto& act = spec.layer(m).activation;
    const auto in_values = alphabet(spec, m);
    const std::size_t in_base = in_values.size();
    const std::size_t in_count = config_count(in_base, net.dims[m]);
    const std::size_t out_n = net.dims[m + 1];
    const std::size_t K = base;
    std::vector<double> next(in_count);
    Eigen::VectorXd x(static_cast<Eigen::Index>(net.dims[m]));
    std::vector<std::size_t> digits(net.dims[m]);
    std::vector<double> log_p(out_n * K);
    for (std::size_t c = 0; c < in_count; ++c) {
      decode(c, in_base, in_values, x, digits);
      const Eigen::VectorXd z = net.matrices[m] * x;
      for (std::size_t a = 0; a < out_n; ++a)
        for (std::size_t k = 0; k < K; ++k)
          log_p[a * K + k] = std::log(act.level_probability(k, z(static_cast<Eigen::Index>(a))));
      double total = kNegInf;
      for (std::size_t c2 = 0; c2 < count; ++c2) {
        if (log_like[c2] == kNegInf) continue;
        double acc = log_like[c2];
        std::size_t rest = c2;
        for (std::size_t a = 0; a < out_n && acc > kNegInf; ++a) {
          acc += log_p[a * K + rest % K];
          rest /= K;
        }
        total = log_sum_exp(total, acc);
      }
      next[c] = total;
    }
    log_like = std::move(next);
    values = in_values;
    base = in_base;
    count = in_count;
  }

  // Posterior over x^(0).
  const auto atoms = spec.prior().atoms();
  std::vector<double> log_w(atoms.size());
  for (std::size_t k = 0; k < atoms.size(); ++k)
    log_w[k] = atoms[k].weight > 0.0 ? std::log(atoms[k].weight) : kNegInf;
  Eigen::VectorXd x(static_cast<Eigen::Index>(net.dims[0]));
  std::vector<std::size_t> digits(net.dims[0]);
  std::vector<double> log_post(count);
  double top_log = kNegInf;
  for (std::size_t c = 0; c < count; ++c) {
    decode(c, base, values, x, digits);
    double acc = log_like[c];
    for (std::size_t d : digits) acc += log_w[d];
    log_post[c] = acc;
    top_log = std::max(top_log, acc);
  }
  if (top_log == kNegInf)
    throw std::runtime_error("brute-force oracle: observation has zero likelihood");
  Eigen::VectorXd num = Eigen::VectorXd::Zero(x.size());
  double den = 0.0;
  for (std::size_t c = 0; c < count; ++c) {
    if (log_post[c] == kNegInf) continue;
    decode(c, base, values, x, digits);
    const double w = std::exp(log_post[c] - top_log);
    num += w * x;
    den += w;
  }
  return num / den;
}

// ---------------------------------------------------------------------------
// Gaussian oracle

void check_lmmse(const NetworkSpec& spec) {
  if (spec.prior().kind() != Prior::Kind::gaussian)
    throw std::invalid_argument("LMMSE oracle needs a Gaussian prior");
  for (std::size_t l = 0; l < spec.depth(); ++l)
    if (!spec.layer(l).activation.is_gaussian())
      throw std::invalid_argument("LMMSE oracle needs awgn/identity activations (layer " +
                                  std::to_string(l) + ")");
}

namespace {

struct GaussianPosterior {
  Eigen::MatrixXd A;
  Eigen::LDLT<Eigen::MatrixXd> cov_y;
};

GaussianPosterior gaussian_posterior(const FiniteNetwork& net) {
  check_lmmse(net.spec);
  GaussianPosterior gp;
  gp.A = chain(net, 0, net.spec.depth());
  const double s2 = net.spec.prior().variance();
  Eigen::MatrixXd S = s2 * gp.A * gp.A.transpose() + tail_noise(net, 0);
  gp.cov_y.compute(S);
  return gp;
}

}  // namespace

Eigen::VectorXd lmmse_gaussian_oracle(const FiniteNetwork& net, const Eigen::VectorXd& y) {
  const auto gp = gaussian_posterior(net);
  if (y.size() != gp.A.rows()) throw std::invalid_argument("observation has the wrong dimension");
  const double mu = net.spec.prior().location();
  const double s2 = net.spec.prior().variance();
  const Eigen::VectorXd mean_x = Eigen::VectorXd::Constant(gp.A.cols(), mu);
  const Eigen::VectorXd resid = y - gp.A * mean_x;
  return mean_x + s2 * gp.A.transpose() * gp.cov_y.solve(resid);
}

double lmmse_avg_mse(const FiniteNetwork& net) {
  const auto gp = gaussian_posterior(net);
  const double s2 = net.spec.prior().variance();
  const Eigen::MatrixXd K = gp.cov_y.solve(gp.A);
  // trace(s2 I - s2^2 A^T S^-1 A) / N.
  const double reduction = (gp.A.array() * K.array()).sum();
  const auto N = static_cast<double>(gp.A.cols());
  return s2 - s2 * s2 * reduction / N;
}

// ---------------------------------------------------------------------------
// Monte Carlo

TrialBatch simulate(const NetworkSpec& spec, const std::vector<std::size_t>& dims,
                    const SimulationOptions& opts) {
  check_dims(spec, dims);
  if (opts.oracle == OracleKind::brute_force)
    check_brute_force(spec, dims);
  else
    check_lmmse(spec);
  if (opts.threads < 1) throw std::invalid_argument("threads must be >= 1");

  std::optional<FiniteNetwork> shared;
  if (!opts.redraw_matrices) {
    Rng rng = stream_rng(opts.seed, std::numeric_limits<std::uint64_t>::max());
    shared = sample_network(spec, dims, rng);
  }

  TrialBatch batch;
  batch.seed = opts.seed;
  batch.oracle = opts.oracle;
  batch.records.resize(opts.n_trials);

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= opts.n_trials) return;
      try {
        Rng rng = stream_rng(opts.seed, t);
        const FiniteNetwork net = shared ? *shared : sample_network(spec, dims, rng);
        Trial trial = sample_trial(net, rng);
        Eigen::VectorXd xhat = opts.oracle == OracleKind::brute_force
                                   ? exact_mmse_brute_force(net, trial.y)
                                   : lmmse_gaussian_oracle(net, trial.y);
        batch.records[t] = {std::move(trial.x0), std::move(trial.y), std::move(xhat)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = opts.n_trials;
        return;
      }
    }
  };
  const int n_threads =
      static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(opts.threads),
                                             std::max<std::size_t>(opts.n_trials, 1)));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return batch;
}

DecouplingReport decoupling_moment_test(const NetworkSpec& spec,
                                        const std::vector<std::size_t>& dims,
                                        const ValidationOptions& opts) {
  for (const auto& m : opts.moments)
    if (m.i < 0 || m.j < 0 || m.i + m.j > 8)
      throw std::invalid_argument("moment orders need i, j >= 0 and i + j <= 8");
  const TrialBatch batch = simulate(spec, dims, opts.sim);

  DecouplingReport rep;
  rep.n_trials = batch.records.size();
  rep.fixed_point = solve(spec, opts.solver);
  const SisoChannel ch(spec.prior(), std::max(kMinEta, rep.fixed_point.eta));
  const HermiteGrid grid = make_grid(opts.solver.grid_order);

  // Coordinate average of f(x0_k, xhat_k) for every trial.
  auto per_trial = [&](auto&& f) {
    std::vector<double> out;
    out.reserve(batch.records.size());
    for (const auto& r : batch.records) {
      CompensatedSum s;
      for (Eigen::Index k = 0; k < r.x0.size(); ++k) s.add(f(r.x0(k), r.xhat(k)));
      out.push_back(s.value() / static_cast<double>(r.x0.size()));
    }
    return out;
  };

  rep.all_pass = true;
  for (const auto& m : opts.moments) {
    const auto v = per_trial([&](double x0, double xh) {
      return std::pow(x0, m.i) * std::pow(xh, m.j);
    });
    const auto me = mean_and_error(v);
    MomentRow row;
    row.pair = m;
    row.empirical = me.mean;
    row.std_error = me.std_error;
    row.predicted = siso_joint_moment(ch, m.i, m.j, grid);
    const double diff = row.empirical - row.predicted;
    const double excess = std::max(0.0, std::abs(diff) - opts.allowance * std::abs(row.predicted));
    if (row.std_error > 0.0) {
      row.z = diff / row.std_error;
      row.z_allowed = excess / row.std_error;
      row.pass = row.z_allowed <= opts.z_threshold;
    } else {
      row.pass = excess <= 1e-12;
      row.z = 0.0;
      row.z_allowed = row.pass ? 0.0 : std::numeric_limits<double>::infinity();
    }
    rep.all_pass = rep.all_pass && row.pass;
    rep.rows.push_back(row);
  }

  const auto orth = mean_and_error(per_trial([](double x0, double xh) { return x0 * xh - xh * xh; }));
  rep.orthogonality = orth.mean;
  rep.orthogonality_se = orth.std_error;
  rep.orthogonality_pass = std::abs(orth.mean) <= opts.z_threshold * orth.std_error + 1e-12;
  rep.all_pass = rep.all_pass && rep.orthogonality_pass;

  const auto mse = mean_and_error(per_trial([](double x0, double xh) { return (x0 - xh) * (x0 - xh); }));
  rep.empirical_mse = mse.mean;
  rep.empirical_mse_se = mse.std_error;
  return rep;
}

}  // namespace mlglm
