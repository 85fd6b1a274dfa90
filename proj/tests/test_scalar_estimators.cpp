#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mlglm/scalar_estimators.hpp"
#include "oracles.hpp"

using namespace mlglm;

namespace {

const Prior kBpsk = Prior::discrete({{-1.0, 0.5}, {1.0, 0.5}});

std::vector<Prior> prior_zoo() {
  return {Prior::gaussian(0.0, 1.0), kBpsk, Prior::discrete({{-2.0, 0.2}, {0.0, 0.5}, {3.0, 0.3}}),
          Prior::bernoulli_gaussian(0.1, 1.0), Prior::bernoulli_gaussian(0.5, 2.0)};
}

std::vector<double> log_lattice(double lo, double hi, int n) {
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1));
  return out;
}

// Frozen from a scipy adaptive-quadrature run of 1 - int tanh(2d + sqrt(2d) z) Dz.
struct TanhReference {
  double d_tilde;
  double mse;
};
constexpr TanhReference kTanhReference[] = {
    {0.1, 0.8309059855305609},
    {0.5, 0.4495995092066728},
    {1.0, 0.23101822192929566},
    {2.0, 0.06859740879073872},
    {10.0, 1.2036620875344184e-05},
};

}  // namespace

TEST_CASE("posterior mean examples") {
  CHECK(posterior_mean(SisoChannel(Prior::gaussian(0.0, 1.0), 1.0), 2.0) == doctest::Approx(1.0));
  for (double eta : {0.01, 0.5, 3.0}) CHECK(posterior_mean(SisoChannel(kBpsk, eta), 0.0) == 0.0);
  // Direct two-atom sum.
  const double lp = std::exp(-(1.0 - 1.0) * (1.0 - 1.0) / (2 * 0.5));
  const double lm = std::exp(-(1.0 + 1.0) * (1.0 + 1.0) / (2 * 0.5));
  const double direct = (lp - lm) / (lp + lm);
  const double got = posterior_mean(SisoChannel(kBpsk, 0.5), 1.0);
  CHECK(got == doctest::Approx(direct).epsilon(1e-14));
  CHECK(got == doctest::Approx(std::tanh(2.0)).epsilon(1e-14));
}

TEST_CASE("spike-and-slab posterior mean against direct integration") {
  const double rho = 0.2, s2 = 1.5, eta = 0.3;
  const SisoChannel ch(Prior::bernoulli_gaussian(rho, s2), eta);
  for (double y : {-2.0, -0.4, 0.0, 0.9, 3.0}) {
    // Slab integral by trapezoid with x = sqrt(s2) t; spike contributes 0 to the numerator.
    auto lik = [&](double x) { return std::exp(-(y - x) * (y - x) / (2 * eta)); };
    const double sd = std::sqrt(s2);
    const double num = rho * oracle::trapezoid_gauss([&](double t) { return sd * t * lik(sd * t); });
    const double den = rho * oracle::trapezoid_gauss([&](double t) { return lik(sd * t); }) +
                       (1 - rho) * lik(0.0);
    CHECK(posterior_mean(ch, y) == doctest::Approx(num / den).epsilon(1e-9));
  }
}

TEST_CASE("posterior mean is nondecreasing in y") {
  for (const auto& p : {Prior::gaussian(0.3, 2.0), kBpsk, Prior::discrete({{0.0, 0.3}, {2.0, 0.7}})}) {
    const SisoChannel ch(p, 0.4);
    double prev = -INFINITY;
    for (double y = -6.0; y <= 6.0; y += 0.05) {
      const double m = posterior_mean(ch, y);
      CHECK(m >= prev);
      prev = m;
    }
  }
}

TEST_CASE("scalar mmse examples") {
  CHECK(scalar_mmse(SisoChannel(Prior::gaussian(0.0, 1.0), 1.0)) == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(std::abs(scalar_mmse(SisoChannel(kBpsk, 1e6)) - 1.0) < 1e-5);
  CHECK(std::abs(scalar_mmse(SisoChannel(kBpsk, 0.5)) - 0.23101822192929566) < 1e-9);
}

TEST_CASE("joint moment examples") {
  for (const auto& p : prior_zoo()) {
    const SisoChannel ch(p, 0.7);
    CHECK(siso_joint_moment(ch, 0, 0) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(std::abs(siso_joint_moment(ch, 1, 1) - siso_joint_moment(ch, 0, 2)) < 1e-10);
  }
  CHECK(siso_joint_moment(SisoChannel(kBpsk, 0.5), 2, 0) == doctest::Approx(1.0).epsilon(1e-14));
  // Wiener: E[X <X>] = s^4 / (s^2 + eta).
  CHECK(siso_joint_moment(SisoChannel(Prior::gaussian(0.0, 2.0), 0.5), 1, 1) ==
        doctest::Approx(4.0 / 2.5).epsilon(1e-12));
  CHECK_THROWS_AS(siso_joint_moment(SisoChannel(kBpsk, 1.0), 5, 4), std::invalid_argument);
  CHECK_THROWS_AS(siso_joint_moment(SisoChannel(kBpsk, 1.0), -1, 0), std::invalid_argument);
}

TEST_CASE("siso channel rejects nonpositive eta") {
  CHECK_THROWS_AS(SisoChannel(kBpsk, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(SisoChannel(kBpsk, -1.0), std::invalid_argument);
  CHECK_THROWS_AS(SisoChannel(kBpsk, INFINITY), std::invalid_argument);
}

TEST_CASE("qpsk closed form") {
  CHECK(std::abs(qpsk_mse_closed_form(1e-9) - 1.0) < 1e-8);
  CHECK(std::abs(qpsk_mse_closed_form(1.0) - scalar_mmse(SisoChannel(kBpsk, 0.5))) < 1e-9);
  CHECK(qpsk_mse_closed_form(50.0) < 1e-3);
  for (const auto& ref : kTanhReference) {
    CAPTURE(ref.d_tilde);
    CHECK(std::abs(qpsk_mse_closed_form(ref.d_tilde) - ref.mse) < 1e-9);
  }
  CHECK_THROWS_AS(qpsk_mse_closed_form(0.0), std::invalid_argument);
  CHECK_THROWS_AS(qpsk_mse_closed_form(-2.0), std::invalid_argument);
}

TEST_CASE("tanh formula agrees with generic quadrature") {
  for (double dt : log_lattice(0.01, 50.0, 25)) {
    CAPTURE(dt);
    const double generic = scalar_mmse(SisoChannel(kBpsk, 1.0 / (2.0 * dt)));
    CHECK(std::abs(qpsk_mse_closed_form(dt) - generic) < 1e-9);
  }
}

TEST_CASE("ser conversion") {
  CHECK(mse_to_ser_qpsk(INFINITY) == 0.0);
  CHECK(mse_to_ser_qpsk(0.0) == doctest::Approx(0.75).epsilon(1e-15));
  const double q2 = oracle::q_erfc(2.0);
  CHECK(mse_to_ser_qpsk(4.0) == doctest::Approx(2 * q2 - q2 * q2).epsilon(1e-14));
  CHECK(mse_to_ser_qpsk(4.0) == doctest::Approx(0.04498269539269887).epsilon(1e-12));
  CHECK_THROWS_AS(mse_to_ser_qpsk(-1.0), std::invalid_argument);
  CHECK_THROWS_AS(mse_to_ser_qpsk(NAN), std::invalid_argument);
}

TEST_CASE("orthogonality on a lattice") {
  for (const auto& p : prior_zoo())
    for (double eta : {0.01, 0.1, 1.0, 10.0, 100.0}) {
      CAPTURE(eta);
      const SisoChannel ch(p, eta);
      CHECK(std::abs(siso_joint_moment(ch, 1, 1) - siso_joint_moment(ch, 0, 2)) < 1e-8);
    }
}

TEST_CASE("mmse is monotone and bounded in eta") {
  for (const auto& p : prior_zoo()) {
    double prev = -1.0;
    for (double eta : log_lattice(0.01, 100.0, 40)) {
      CAPTURE(eta);
      const double m = scalar_mmse(SisoChannel(p, eta));
      CHECK(m >= prev - 1e-12);
      CHECK(m >= 0.0);
      CHECK(m <= p.second_moment() + 1e-12);
      prev = m;
    }
  }
}
