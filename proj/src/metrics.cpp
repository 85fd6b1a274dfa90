#include "mlglm/metrics.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>

#include "mlglm/scalar_estimators.hpp"

namespace mlglm {

AvgMse avg_mse_from_state(const FixedPointResult& result) {
  if (result.state.T.empty()) throw std::invalid_argument("fixed point has no layers");
  return {result.state.T[0] - result.state.d[0], !result.converged};
}

double multiuser_efficiency(const FixedPointResult& result, double noise_variance) {
  if (!(noise_variance > 0.0)) throw std::invalid_argument("noise variance must be > 0");
  if (!(result.eta > 0.0)) throw std::invalid_argument("eta must be > 0");
  return noise_variance / result.eta;
}

std::optional<double> symbol_error_rate(const Prior& prior, double eta) {
  if (!prior.is_two_atom()) return std::nullopt;
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be >= 0");
  const auto atoms = prior.atoms();
  const double half = 0.5 * (atoms[1].value - atoms[0].value);
  const double arg = eta == 0.0 ? INFINITY : half * half / eta;
  return mse_to_ser_qpsk(arg);
}

namespace {

void check_monotonic(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("sweep values must be nonempty");
  for (double x : v)
    if (!std::isfinite(x)) throw std::invalid_argument("sweep values must be finite");
  if (v.size() < 2) return;
  const bool up = v[1] > v[0];
  for (std::size_t i = 1; i < v.size(); ++i)
    if (up ? !(v[i] > v[i - 1]) : !(v[i] < v[i - 1]))
      throw std::invalid_argument("sweep values must be strictly monotonic");
}

Activation with_noise(const Activation& a, double v) {
  switch (a.kind()) {
    case Activation::Kind::awgn:
      return Activation::awgn(v);
    case Activation::Kind::sign:
      return Activation::sign(v);
    case Activation::Kind::discrete_map:
      return Activation::discrete_map({a.levels().begin(), a.levels().end()},
                                      {a.thresholds().begin(), a.thresholds().end()}, v);
    case Activation::Kind::identity:
      break;
  }
  throw std::invalid_argument("noise_variance sweep needs a noisy last layer, not identity");
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", x);
  return buf;
}

}  // namespace

void SweepSpec::validate() const {
  check_monotonic(values);
  switch (axis) {
    case SweepAxis::noise_variance:
      if (base.layer(base.depth() - 1).activation.kind() == Activation::Kind::identity)
        throw std::invalid_argument("noise_variance sweep needs a noisy last layer, not identity");
      break;
    case SweepAxis::alpha_of_layer:
      if (layer >= base.depth())
        throw std::invalid_argument("sweep layer " + std::to_string(layer) + " out of range");
      break;
    case SweepAxis::sparsity:
      if (base.prior().kind() != Prior::Kind::bernoulli_gaussian)
        throw std::invalid_argument("sparsity sweep needs a bernoulli_gaussian prior");
      break;
  }
}

NetworkSpec SweepSpec::at(double value) const {
  switch (axis) {
    case SweepAxis::noise_variance: {
      const std::size_t last = base.depth() - 1;
      Layer l = base.layer(last);
      l.activation = with_noise(l.activation, value);
      return base.with_layer(last, l);
    }
    case SweepAxis::alpha_of_layer: {
      Layer l = base.layer(layer);
      l.alpha = value;
      return base.with_layer(layer, l);
    }
    case SweepAxis::sparsity:
      return NetworkSpec(Prior::bernoulli_gaussian(value, base.prior().variance()),
                         {base.layers().begin(), base.layers().end()});
  }
  throw std::logic_error("unknown sweep axis");
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, const SweepOptions& opts) {
  spec.validate();
  if (opts.threads < 1) throw std::invalid_argument("threads must be >= 1");
  std::vector<SweepRow> rows(spec.values.size());

  auto solve_row = [&](std::size_t i, const std::optional<ReplicaState>& warm) {
    SweepRow& row = rows[i];
    row.axis_value = spec.values[i];
    try {
      const NetworkSpec net = spec.at(row.axis_value);
      SolverOptions so = opts.solver;
      if (warm) {
        so.init = InitStyle::warm;
        so.warm_state = warm;
      }
      row.result = solve(net, so);
      row.eta = row.result.eta;
      row.avg_mse = row.result.avg_mse;
      row.ser = symbol_error_rate(net.prior(), row.eta);
      row.iterations = row.result.iterations;
      row.converged = row.result.converged;
    } catch (const std::exception& e) {
      row.error = e.what();
      row.converged = false;
    }
  };

  if (!opts.parallel) {
    std::optional<ReplicaState> warm;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      solve_row(i, opts.solver.init == InitStyle::multi_start ? std::nullopt : warm);
      if (rows[i].converged) warm = rows[i].result.state;
    }
    return rows;
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < rows.size();) solve_row(i, std::nullopt);
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < opts.threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return rows;
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << kSweepCsvHeader << '\n';
  for (const auto& r : rows) {
    const bool ok = r.error.empty();
    out << fmt(r.axis_value) << ',' << (ok ? fmt(r.eta) : "") << ',' << (ok ? fmt(r.avg_mse) : "")
        << ',' << (r.ser ? fmt(*r.ser) : "") << ',' << r.iterations << ','
        << (r.converged ? 1 : 0) << '\n';
  }
}

}  // namespace mlglm
