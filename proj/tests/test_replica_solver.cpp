#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "mlglm/replica_solver.hpp"
#include "mlglm/scalar_estimators.hpp"
#include "oracles.hpp"

using namespace mlglm;

namespace {

const Prior kBpsk = Prior::discrete({{-1.0, 0.5}, {1.0, 0.5}});
const Prior kGauss = Prior::gaussian(0.0, 1.0);

// Positive root of eta = 0.1 + eta / (2 (1 + eta)), i.e. eta^2 + 0.4 eta - 0.1 = 0.
const double kSlmEta = (-0.4 + std::sqrt(0.56)) / 2.0;

NetworkSpec slm_network(const Prior& p, double sigma2, double alpha) {
  return NetworkSpec(p, {{alpha, Activation::awgn(sigma2)}});
}

ReplicaState state_of(std::vector<double> T, std::vector<double> d, std::vector<double> q,
                      std::vector<double> d_tilde) {
  return {std::move(T), std::move(d), std::move(q), std::move(d_tilde)};
}

// 1 - int tanh(2 d + sqrt(2 d) z) Dz on the trapezoid oracle.
double oracle_qpsk_mse(double d_tilde) {
  return 1.0 - oracle::trapezoid_gauss([&](double z) {
           return std::tanh(2.0 * d_tilde + std::sqrt(2.0 * d_tilde) * z);
         });
}

}  // namespace

TEST_CASE("forward power sweep") {
  const auto& g = default_grid();
  CHECK(forward_power_sweep(NetworkSpec(kGauss, {{1.0, Activation::awgn(0.1)}}), g)[0] ==
        doctest::Approx(1.0));

  const auto T_id = forward_power_sweep(
      NetworkSpec(kGauss, {{2.0, Activation::identity()}, {1.0, Activation::awgn(0.1)}}), g);
  CHECK(T_id[1] == doctest::Approx(0.5).epsilon(1e-14));

  for (double alpha : {0.5, 1.0, 3.0}) {
    const auto T_sign = forward_power_sweep(
        NetworkSpec(kGauss, {{alpha, Activation::sign()}, {1.0, Activation::awgn(0.1)}}), g);
    CHECK(T_sign[1] == doctest::Approx(1.0).epsilon(1e-14));
  }

  const auto T_awgn = forward_power_sweep(
      NetworkSpec(kBpsk, {{0.5, Activation::awgn(0.3)}, {1.0, Activation::awgn(0.1)}}), g);
  CHECK(T_awgn[1] == doctest::Approx(2.0 + 0.3).epsilon(1e-14));
}

TEST_CASE("q of the last layer") {
  const auto& g = default_grid();
  SUBCASE("awgn output with no prior knowledge") {
    const double sigma2 = 0.5;
    const double alpha = 2.0;
    NetworkSpec net(kGauss, {{alpha, Activation::awgn(sigma2)}});
    const auto s = state_of({1.0}, {0.0}, {0.0}, {1.0});
    const double rho = 1.0 / alpha;
    CHECK(q_last_layer(net, g, s) == doctest::Approx(rho * rho / (rho + sigma2)).epsilon(1e-13));
  }
  SUBCASE("awgn output agrees with the output-axis quadrature") {
    const double sigma2 = 0.2;
    const double alpha = 1.5;
    NetworkSpec net(kGauss, {{alpha, Activation::awgn(sigma2)}});
    const double T = 1.0;
    const double d = 0.4;
    const auto s = state_of({T}, {d}, {0.0}, {1.0});
    const double scale = std::sqrt(d / alpha);
    const double v = (T - d) / alpha;
    const auto& act = net.layer(0).activation;
    const double quad = gauss_expect_output(
        g, act, [&](double xi) { return scale * xi; }, v, [&](double xi, double y) {
          const double z = z_posterior_mean(act, y, scale * xi, v);
          return z * z;
        });
    CHECK(q_last_layer(net, g, s) == doctest::Approx(quad).epsilon(1e-12));
  }
  SUBCASE("noiseless sign output") {
    NetworkSpec net(kGauss, {{1.0, Activation::sign()}});
    const auto s = state_of({1.0}, {0.0}, {0.0}, {1.0});
    // E[z | sign z = +1] = 2 int_0^inf z N(z|0,1) dz.
    const double half_mean = 2.0 * oracle::trapezoid_gauss([](double z) { return z; }, 0.0, 12.0);
    CHECK(half_mean * half_mean == doctest::Approx(2.0 / std::numbers::pi).epsilon(1e-9));
    CHECK(q_last_layer(net, g, s) == doctest::Approx(2.0 / std::numbers::pi).epsilon(1e-12));
  }
  SUBCASE("probit output with partial knowledge against a 2-D oracle") {
    const double pre = 0.3;
    const double alpha = 0.8;
    const double T = 1.0;
    NetworkSpec net(kGauss, {{alpha, Activation::sign(pre)}});
    for (double d : {0.2, 0.7, 0.99}) {
      const auto s = state_of({T}, {d}, {0.0}, {1.0});
      const double scale = std::sqrt(d / alpha);
      const double v = (T - d) / alpha;
      // sum over y of P(y | xi) E[z | y, xi]^2, with E[z 1{y}] by a 1-D trapezoid in z.
      const double oracle_q = oracle::trapezoid_gauss(
          [&](double xi) {
            const double m = scale * xi;
            const auto tail = [&](double sgn) {
              return oracle::trapezoid_gauss(
                  [&](double t) {
                    const double z = m + std::sqrt(v) * t;
                    return z * oracle::q_erfc(-sgn * z / std::sqrt(pre));
                  },
                  -10.0, 10.0, 2001);
            };
            const double z_up = tail(1.0);
            const double z_dn = tail(-1.0);
            const double p_up = oracle::q_erfc(-m / std::sqrt(v + pre));
            const double p_dn = oracle::q_erfc(m / std::sqrt(v + pre));
            double acc = 0.0;
            if (p_up > 1e-300) acc += z_up * z_up / p_up;
            if (p_dn > 1e-300) acc += z_dn * z_dn / p_dn;
            return acc;
          },
          -10.0, 10.0, 2001);
      CHECK(q_last_layer(net, g, s) == doctest::Approx(oracle_q).epsilon(1e-8));
    }
  }
  SUBCASE("near-perfect knowledge stays finite") {
    NetworkSpec net(kGauss, {{1.0, Activation::identity()}});
    const auto s = state_of({1.0}, {0.999999}, {0.0}, {1.0});
    const double q = q_last_layer(net, g, s);
    CHECK(std::isfinite(q));
    CHECK(q == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("d >= T is rejected") {
    NetworkSpec net(kGauss, {{1.0, Activation::awgn(0.1)}});
    CHECK_THROWS_AS(q_last_layer(net, g, state_of({1.0}, {1.0}, {0.0}, {1.0})), std::domain_error);
  }
}

TEST_CASE("middle layers against the Gaussian conditioning algebra") {
  const auto& g = default_grid();
  const double sigma2 = 0.3;
  const double alpha = 1.7;
  NetworkSpec net(kGauss, {{alpha, Activation::awgn(sigma2)}, {1.2, Activation::awgn(0.1)}});
  const double T0 = 1.0;
  const double T1 = T0 / alpha + sigma2;
  for (double d : {0.0, 0.3, 0.9}) {
    for (double dt : {0.05, 1.0, 40.0}) {
      const auto s = state_of({T0, T1}, {d, 0.2}, {0.0, 0.0}, {1.0, dt});
      // z ~ N(m, v), x = z + N(0, sigma2), zeta = x + N(0, eta), m = sqrt(d / alpha) xi.
      const double v = (T0 - d) / alpha;
      const double eta = 1.0 / (2.0 * dt);
      const double var_zeta = v + sigma2 + eta;
      const double cov_z = v;
      const double cov_x = v + sigma2;
      const double q_ref = d / alpha + cov_z * cov_z / var_zeta;
      const double d_ref = d / alpha + cov_x * cov_x / var_zeta;
      CHECK(q_middle_layer(net, g, s, 0) == doctest::Approx(q_ref).epsilon(1e-7));
      CHECK(d_middle_layer(net, g, s, 1) == doctest::Approx(d_ref).epsilon(1e-7));
    }
  }
  SUBCASE("identity activation with strong downstream information") {
    NetworkSpec id_net(kGauss, {{2.0, Activation::identity()}, {1.0, Activation::awgn(0.1)}});
    const auto s = state_of({1.0, 0.5}, {0.25, 0.1}, {0.0, 0.0}, {1.0, 1e9});
    // zeta = z + N(0, 5e-10): the estimate of z is essentially z itself.
    CHECK(q_middle_layer(id_net, g, s, 0) == doctest::Approx(0.5).epsilon(1e-8));
  }
  SUBCASE("sign activation without downstream information") {
    NetworkSpec sign_net(kGauss, {{1.0, Activation::sign()}, {1.0, Activation::awgn(0.1)}});
    const auto s = state_of({1.0, 1.0}, {0.0, 0.0}, {0.0, 0.0}, {1.0, 1e-9});
    CHECK(std::abs(d_middle_layer(sign_net, g, s, 1)) < 1e-8);
    CHECK(std::abs(q_middle_layer(sign_net, g, s, 0)) < 1e-8);
  }
  SUBCASE("index and argument checks") {
    const auto s = state_of({T0, T1}, {0.1, 0.1}, {0.0, 0.0}, {1.0, 1.0});
    CHECK_THROWS_AS(q_middle_layer(net, g, s, 1), std::out_of_range);
    CHECK_THROWS_AS(d_middle_layer(net, g, s, 0), std::out_of_range);
    const auto bad = state_of({T0, T1}, {0.1, 0.1}, {0.0, 0.0}, {1.0, 0.0});
    CHECK_THROWS_AS(q_middle_layer(net, g, bad, 0), std::domain_error);
  }
}

TEST_CASE("layer posterior power of a quantizer") {
  const auto& g = default_grid();
  const auto act = Activation::sign(0.2);
  for (double m : {-1.0, 0.0, 0.4}) {
    for (double eta : {1e-3, 0.1, 2.0}) {
      const auto p = layer_posterior_power(act, m, 0.5, eta, g);
      CHECK(p.z_gain == doctest::Approx(p.z_power - m * m).epsilon(1e-12));
      CHECK(p.x_error == doctest::Approx(1.0 - p.x_power).epsilon(1e-10));
      CHECK(p.x_error >= 0.0);
    }
  }
  // Exact observation of x: no residual error on x.
  const auto exact = layer_posterior_power(act, 0.3, 0.5, 0.0, g);
  CHECK(exact.x_power == doctest::Approx(1.0));
  CHECK(exact.x_error == 0.0);
}

TEST_CASE("d_tilde update") {
  CHECK(d_tilde_update(state_of({1.0}, {0.5}, {0.5}, {1.0}), 0, 2.0).value ==
        doctest::Approx(2.0));
  const auto zero = d_tilde_update(state_of({1.0}, {0.3}, {0.3}, {1.0}), 0, 1.0);
  CHECK(zero.value == 1e-12);
  CHECK_FALSE(zero.saturated);
  const auto capped = d_tilde_update(state_of({1.0}, {1.0}, {0.6}, {1.0}), 0, 1.0);
  CHECK(capped.value == 1e12);
  CHECK(capped.saturated);
}

TEST_CASE("d of the first layer") {
  const auto& g = default_grid();
  NetworkSpec gnet = slm_network(kGauss, 0.1, 1.0);
  CHECK(d_first_layer(gnet, g, state_of({1.0}, {0.0}, {0.0}, {0.5})) ==
        doctest::Approx(0.5).epsilon(1e-12));

  NetworkSpec bnet = slm_network(kBpsk, 0.1, 1.0);
  for (double dt : {0.1, 0.5, 1.0, 2.0, 10.0}) {
    const double d = d_first_layer(bnet, g, state_of({1.0}, {0.0}, {0.0}, {dt}));
    CHECK(std::abs(d - (1.0 - qpsk_mse_closed_form(dt))) < 1e-9);
    CHECK(std::abs(d - (1.0 - oracle_qpsk_mse(dt))) < 1e-9);
  }
  CHECK(std::abs(d_first_layer(bnet, g, state_of({1.0}, {0.0}, {0.0}, {1e-12}))) < 1e-9);
}

TEST_CASE("solve on the linear Gaussian model") {
  const auto net = slm_network(kGauss, 0.1, 2.0);
  const auto res = solve(net);
  REQUIRE(res.converged);
  CHECK(std::abs(res.eta - kSlmEta) < 1e-8);
  CHECK(res.avg_mse == res.state.T[0] - res.state.d[0]);
  CHECK(res.avg_mse == doctest::Approx(kSlmEta / (1.0 + kSlmEta)).epsilon(1e-7));
  CHECK(res.residual <= 1e-9);
  CHECK_FALSE(res.saturated);

  const auto slm = solve_slm(kGauss, 0.1, 2.0);
  REQUIRE(slm.converged);
  CHECK(std::abs(slm.eta - kSlmEta) < 1e-8);
  CHECK(std::abs(slm.eta - res.eta) < 1e-8);
}

TEST_CASE("solve_slm limits") {
  const auto wide = solve_slm(kGauss, 0.1, 1e6);
  REQUIRE(wide.converged);
  CHECK(wide.eta == doctest::Approx(0.1).epsilon(1e-5));

  SUBCASE("noiseless two-atom model") {
    // g(eta) = eta - mmse(eta) / 2 stays positive, so the only fixed point is
    // eta -> 0, which the solver reaches as the kMinEta floor.
    for (double eta = 1e-3; eta < 10.0; eta *= 1.5)
      CHECK(eta - oracle_qpsk_mse(1.0 / (2.0 * eta)) / 2.0 > 0.0);
    const auto res = solve_slm(kBpsk, 0.0, 2.0);
    CHECK(res.converged);
    CHECK(res.eta <= 1e-9);
  }
  SUBCASE("noisy two-atom model against bisection") {
    const double sigma2 = 0.2;
    const double alpha = 0.7;
    const double root = oracle::bisect(
        [&](double eta) { return eta - sigma2 - oracle_qpsk_mse(1.0 / (2.0 * eta)) / alpha; },
        sigma2, sigma2 + 2.0 / alpha, 80);
    const auto res = solve_slm(kBpsk, sigma2, alpha);
    REQUIRE(res.converged);
    CHECK(res.eta == doctest::Approx(root).epsilon(1e-8));
    const auto gen = solve(slm_network(kBpsk, sigma2, alpha));
    REQUIRE(gen.converged);
    CHECK(std::abs(gen.eta - res.eta) < 1e-8);
  }
  CHECK_THROWS_AS(solve_slm(kGauss, -0.1, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(solve_slm(kGauss, 0.1, 0.0), std::invalid_argument);
}

TEST_CASE("zero-capacity last layer carries no information") {
  const auto mute = Activation::discrete_map({0.0}, {});
  for (const auto& prior : {kGauss, kBpsk}) {
    NetworkSpec one(prior, {{1.0, mute}});
    const auto r1 = solve(one);
    REQUIRE(r1.converged);
    CHECK(r1.avg_mse == doctest::Approx(prior.second_moment()).epsilon(1e-9));
    CHECK(std::abs(r1.state.d[0]) < 1e-9);

    NetworkSpec two(prior, {{1.5, Activation::sign()}, {1.0, mute}});
    const auto r2 = solve(two);
    REQUIRE(r2.converged);
    CHECK(r2.avg_mse == doctest::Approx(prior.second_moment()).epsilon(1e-9));
    for (double d : r2.state.d) CHECK(std::abs(d) < 1e-9);
  }
}

TEST_CASE("converged states satisfy the fixed-point identities") {
  const std::vector<NetworkSpec> nets = {
      slm_network(kBpsk, 0.3, 1.0),
      NetworkSpec(kBpsk, {{1.0, Activation::sign(0.1)}}),
      NetworkSpec(kGauss, {{1.0, Activation::sign()}, {2.0, Activation::awgn(0.1)}}),
      NetworkSpec(kBpsk, {{0.5, Activation::awgn(0.05)}, {1.5, Activation::awgn(0.1)}}),
  };
  for (const auto& net : nets) {
    const auto res = solve(net);
    REQUIRE(res.converged);
    const auto& g = default_grid();
    CHECK(fixed_point_residual(net, g, res.state) < 1e-8);
    const double mmse = scalar_mmse(SisoChannel(net.prior(), res.eta));
    CHECK(std::abs(res.avg_mse - mmse) < 1e-7);
    CHECK(res.avg_mse >= 0.0);
    CHECK(res.avg_mse <= net.prior().second_moment());
    for (std::size_t l = 0; l < net.depth(); ++l) {
      CHECK(res.state.d[l] >= 0.0);
      CHECK(res.state.d[l] <= res.state.T[l]);
    }

    SolverOptions fine;
    fine.grid_order = 128;
    const auto res2 = solve(net, fine);
    CHECK(std::abs(res2.eta - res.eta) < 1e-6);

    SolverOptions warm;
    warm.init = InitStyle::warm;
    warm.warm_state = res.state;
    const auto again = solve(net, warm);
    CHECK(again.converged);
    CHECK(again.iterations < res.iterations);
    CHECK(std::abs(again.eta - res.eta) <= 1e-8 * res.eta);
  }
}

TEST_CASE("perfect recovery is flagged") {
  // Noiseless +-1 inputs with twice as many observations: the MMSE vanishes.
  const auto res = solve(slm_network(kBpsk, 0.0, 2.0));
  CHECK(res.converged);
  CHECK(res.saturated);
  CHECK(res.avg_mse <= 1e-8);
}

TEST_CASE("multi-start reports distinct fixed points") {
  SolverOptions opts;
  opts.init = InitStyle::multi_start;
  const auto res = solve(slm_network(kGauss, 0.1, 2.0), opts);
  REQUIRE(res.converged);
  CHECK(res.all_solutions.size() == 1);
  CHECK(std::abs(res.all_solutions[0].eta - kSlmEta) < 1e-8);

  const auto bpsk = solve(slm_network(kBpsk, 0.05, 0.6), opts);
  CHECK(bpsk.all_solutions.size() >= 1);
  for (const auto& s : bpsk.all_solutions) {
    CHECK(s.converged);
    const double mmse = scalar_mmse(SisoChannel(kBpsk, s.eta));
    CHECK(std::abs(s.avg_mse - mmse) < 1e-7);
  }
}

TEST_CASE("solver options are validated") {
  SolverOptions o;
  o.damping = 1.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.tol = 0.0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.max_iter = 0;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.init = InitStyle::warm;
  CHECK_THROWS_AS(o.validate(), std::invalid_argument);
  o = {};
  o.grid_order = 1;
  CHECK_THROWS_AS(solve(slm_network(kGauss, 0.1, 1.0), o), std::invalid_argument);
}

TEST_CASE("non-convergence is reported, not hidden") {
  SolverOptions o;
  o.max_iter = 3;
  const auto res = solve(slm_network(kBpsk, 0.2, 1.0), o);
  CHECK_FALSE(res.converged);
  CHECK(res.iterations == 3);
  CHECK(res.residual > o.tol);
}
