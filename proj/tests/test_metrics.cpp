#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "mlglm/metrics.hpp"
#include "mlglm/scalar_estimators.hpp"

using namespace mlglm;

namespace {

const Prior kBpsk = Prior::discrete({{-1.0, 0.5}, {1.0, 0.5}});
const Prior kGauss = Prior::gaussian(0.0, 1.0);
const double kSlmEta = (-0.4 + std::sqrt(0.56)) / 2.0;

NetworkSpec slm(const Prior& p, double s2, double alpha) {
  return NetworkSpec(p, {{alpha, Activation::awgn(s2)}});
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("avg mse is the power gap of the first layer") {
  const auto r = solve(slm(kGauss, 0.1, 2.0));
  REQUIRE(r.converged);
  const auto m = avg_mse_from_state(r);
  CHECK_FALSE(m.warning);
  CHECK(m.value == doctest::Approx(kSlmEta / (1.0 + kSlmEta)).epsilon(1e-8));
  const double eta = 1.0 / (2.0 * r.state.d_tilde[0]);
  CHECK(std::abs(m.value - scalar_mmse(SisoChannel(kGauss, eta))) < 1e-8);

  const auto zero = solve(NetworkSpec(Prior::gaussian(0.0, 2.5), {{1.0, Activation::awgn(1e12)}}));
  CHECK(avg_mse_from_state(zero).value == doctest::Approx(2.5).epsilon(1e-6));

  SolverOptions short_run;
  short_run.max_iter = 2;
  const auto u = solve(slm(kBpsk, 0.2, 1.0), short_run);
  REQUIRE_FALSE(u.converged);
  const auto mu = avg_mse_from_state(u);
  CHECK(mu.warning);
  CHECK(std::isfinite(mu.value));
}

TEST_CASE("multiuser efficiency") {
  const auto r = solve(slm(kGauss, 0.1, 2.0));
  CHECK(multiuser_efficiency(r, 0.1) == doctest::Approx(0.1 / kSlmEta).epsilon(1e-8));
  CHECK(multiuser_efficiency(solve(slm(kGauss, 0.1, 1e6)), 0.1) == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(multiuser_efficiency(solve(slm(kBpsk, 1e6, 1.0)), 1e6) == doctest::Approx(1.0).epsilon(1e-5));
  for (double a : {0.25, 0.5, 1.0, 2.0, 4.0})
    for (double s2 : {0.01, 0.1, 1.0}) {
      for (const Prior& p : {kGauss, kBpsk}) {
        const double e = multiuser_efficiency(solve_slm(p, s2, a), s2);
        CHECK(e > 0.0);
        CHECK(e <= 1.0 + 1e-12);
      }
    }
  FixedPointResult bad;
  bad.eta = 0.0;
  CHECK_THROWS_AS(multiuser_efficiency(bad, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(multiuser_efficiency(r, 0.0), std::invalid_argument);
}

TEST_CASE("symbol error rate for two-atom priors") {
  CHECK(symbol_error_rate(kBpsk, 0.5).value() == doctest::Approx(mse_to_ser_qpsk(2.0)).epsilon(1e-14));
  const Prior shifted = Prior::discrete({{0.0, 0.5}, {4.0, 0.5}});
  CHECK(symbol_error_rate(shifted, 2.0).value() == doctest::Approx(mse_to_ser_qpsk(2.0)).epsilon(1e-14));
  CHECK(symbol_error_rate(kBpsk, 0.0).value() == 0.0);
  CHECK_FALSE(symbol_error_rate(kGauss, 0.5).has_value());
  CHECK_FALSE(symbol_error_rate(Prior::discrete({{-1, 0.3}, {0, 0.4}, {1, 0.3}}), 0.5).has_value());
}

TEST_CASE("sweep spec validation") {
  SweepSpec s{slm(kGauss, 0.1, 2.0), SweepAxis::noise_variance, 0, {}};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.values = {1.0, 0.5, 0.5};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.values = {1.0, 0.5, 0.7};
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.values = {0.1, 0.5, 1.0};
  CHECK_NOTHROW(s.validate());
  s.axis = SweepAxis::sparsity;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.axis = SweepAxis::alpha_of_layer;
  s.layer = 1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  SweepSpec id{NetworkSpec(kGauss, {{1.0, Activation::identity()}}), SweepAxis::noise_variance, 0, {0.1}};
  CHECK_THROWS_AS(id.validate(), std::invalid_argument);

  const SweepSpec q{NetworkSpec(kBpsk, {{2.0, Activation::sign()}}), SweepAxis::noise_variance, 0, {0.3}};
  CHECK(q.at(0.3).layer(0).activation.pre_noise_variance() == 0.3);
  const SweepSpec bg{NetworkSpec(Prior::bernoulli_gaussian(0.2, 3.0), {{1.0, Activation::awgn(0.1)}}),
                     SweepAxis::sparsity, 0, {0.1}};
  CHECK(bg.at(0.1).prior().sparsity() == 0.1);
  CHECK(bg.at(0.1).prior().variance() == 3.0);
}

TEST_CASE("single-point sweep equals a direct solve") {
  const SweepSpec s{slm(kBpsk, 0.1, 1.0), SweepAxis::noise_variance, 0, {0.2}};
  const auto rows = run_sweep(s);
  REQUIRE(rows.size() == 1);
  const auto direct = solve(slm(kBpsk, 0.2, 1.0));
  CHECK(rows[0].eta == direct.eta);
  CHECK(rows[0].avg_mse == direct.avg_mse);
  CHECK(rows[0].iterations == direct.iterations);
  CHECK(rows[0].converged);
  CHECK(rows[0].ser.has_value());
}

TEST_CASE("avg mse falls as the noise falls") {
  const SweepSpec s{slm(kGauss, 1.0, 2.0), SweepAxis::noise_variance, 0, {2.0, 1.0, 0.5, 0.1, 0.01, 0.001}};
  const auto rows = run_sweep(s);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(rows[i].converged);
    CHECK(rows[i].avg_mse <= rows[i - 1].avg_mse);
  }
}

TEST_CASE("warm-started sweep agrees with cold starts") {
  const NetworkSpec base(kBpsk, {{2.0, Activation::sign(0.05)}, {1.0, Activation::awgn(0.1)}});
  SweepOptions o;
  o.solver.grid_order = 24;
  const SweepSpec s{base, SweepAxis::alpha_of_layer, 1, {0.75, 1.0, 1.5}};
  const auto warm = run_sweep(s, o);
  o.parallel = true;
  o.threads = 3;
  const auto cold = run_sweep(s, o);
  REQUIRE(warm.size() == 3);
  for (std::size_t i = 0; i < warm.size(); ++i) {
    REQUIRE(warm[i].converged);
    REQUIRE(cold[i].converged);
    CHECK(std::abs(warm[i].eta - cold[i].eta) < 10.0 * o.solver.tol * std::max(1.0, cold[i].eta));
  }
}

TEST_CASE("failed and unconverged points keep their rows") {
  SweepOptions o;
  o.solver.max_iter = 3;
  const SweepSpec s{slm(kBpsk, 0.1, 1.0), SweepAxis::noise_variance, 0, {1.0, 0.5, -0.1}};
  const auto rows = run_sweep(s, o);
  REQUIRE(rows.size() == 3);
  CHECK_FALSE(rows[0].converged);
  CHECK(rows[0].error.empty());
  CHECK(rows[1].iterations == 3);
  CHECK_FALSE(rows[2].error.empty());

  std::ostringstream csv;
  write_sweep_csv(csv, rows);
  const auto lines = lines_of(csv.str());
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "axis,eta,avg_mse,ser,iterations,converged");
  CHECK(lines[3] == "-0.1,,,,0,0");
}

TEST_CASE("sweep csv rows") {
  const SweepSpec s{slm(kGauss, 0.1, 2.0), SweepAxis::noise_variance, 0, {1.0, 0.5, 0.1}};
  std::ostringstream csv;
  write_sweep_csv(csv, run_sweep(s));
  const auto lines = lines_of(csv.str());
  REQUIRE(lines.size() == 4);
  CHECK(lines[3].rfind("0.1,0.174165738", 0) == 0);
  CHECK(lines[3].substr(lines[3].size() - 2) == ",1");
  CHECK(lines[3].find(",,") != std::string::npos);
}
