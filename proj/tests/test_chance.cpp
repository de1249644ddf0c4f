#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "css/chance.hpp"
#include "css/error.hpp"
#include "css/rng.hpp"
#include "support/oracles.hpp"

using css::Error;
using css::ErrorCode;
namespace chance = css::chance;

TEST_CASE("chebyshev residual arithmetic") {
  // mean -3, var 1, t 3, eta 1/9: 9 + 1 - 18 + 9*(8/9) = 0, and the
  // one-sided Chebyshev tail 1/(1+9) = 0.1 is indeed below 1/9.
  CHECK(chance::chebyshev_residual(-3.0, 1.0, 3.0, 1.0 / 9.0) == doctest::Approx(0.0));
  CHECK(1.0 / (1.0 + 9.0) <= 1.0 / 9.0);

  CHECK(chance::chebyshev_residual(0.0, 0.0, 1.0, 1.0) == doctest::Approx(0.0));
  CHECK(chance::chebyshev_residual(-3.0, 1.0, 1.0, 0.5) == doctest::Approx(4.5));
  CHECK_THROWS_AS(chance::chebyshev_residual(0.0, 0.0, 0.0, 0.5), Error);
}

TEST_CASE("relax_chance_ge certificates") {
  const chance::NoiseModel unit{Eigen::MatrixXd::Identity(1, 1)};

  // Deterministic f = -1: certified at eta = 0.
  chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Zero(1);
  f.c = -1.0;
  Eigen::VectorXd x(1);
  x << 0.0;
  CHECK(chance::relax_chance_ge(f, x, unit, 1.0, 0.0) == doctest::Approx(0.0));

  // The scalar case embedded: b = (1), x = (-3), Sigma = 1.
  f.b = Eigen::VectorXd::Ones(1);
  f.c = 0.0;
  x << -3.0;
  CHECK(chance::relax_chance_ge(f, x, unit, 3.0, 1.0 / 9.0) == doctest::Approx(0.0));

  // eta = 1 reduces to (mean + t)^2 + var - t^2.
  f.b = Eigen::VectorXd::Zero(1);
  f.c = 0.0;
  x << 0.0;
  CHECK(chance::relax_chance_ge(f, x, unit, 1.0, 1.0) == doctest::Approx(0.0));
}

TEST_CASE("monte carlo probability matches the gaussian tail") {
  const chance::NoiseModel unit{Eigen::MatrixXd::Identity(1, 1)};
  chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Ones(1);
  f.c = 0.0;
  Eigen::VectorXd x(1);
  x << -3.0;
  const auto mc = chance::monte_carlo_probability(f, x, unit, 1000000, 77);
  const double tail = oracles::normal_tail(3.0);
  CHECK(std::abs(mc.estimate - tail) <= 4.0 * mc.wilson_halfwidth);
  CHECK(mc.samples == 1000000);
}

TEST_CASE("monte carlo degenerate events") {
  const chance::NoiseModel none{Eigen::MatrixXd::Zero(2, 2)};
  chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);

  f.c = -1.0;
  CHECK(chance::monte_carlo_probability(f, x, none, 10000, 1).estimate == 0.0);
  f.c = 1.0;
  CHECK(chance::monte_carlo_probability(f, x, none, 10000, 1).estimate == 1.0);
}

TEST_CASE("monte carlo is worker-count independent") {
  const chance::NoiseModel unit{Eigen::MatrixXd::Identity(3, 3)};
  chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Ones(3);
  f.c = -2.0;
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(3);
  setenv("CSS_THREADS", "1", 1);
  const auto serial = chance::monte_carlo_probability(f, x, unit, 100000, 404);
  unsetenv("CSS_THREADS");
  const auto parallel = chance::monte_carlo_probability(f, x, unit, 100000, 404);
  CHECK(serial.hits == parallel.hits);
}

TEST_CASE("monte carlo is deterministic per seed") {
  const chance::NoiseModel unit{Eigen::MatrixXd::Identity(2, 2)};
  chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Ones(2);
  f.c = -1.5;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  const auto a = chance::monte_carlo_probability(f, x, unit, 50000, 9001);
  const auto b = chance::monte_carlo_probability(f, x, unit, 50000, 9001);
  CHECK(a.hits == b.hits);
  const auto c = chance::monte_carlo_probability(f, x, unit, 50000, 9002);
  CHECK(a.hits != c.hits);
}

TEST_CASE("cholesky failure on indefinite covariance") {
  Eigen::MatrixXd bad(2, 2);
  bad << 1.0, 0.0, 0.0, -1.0;
  const chance::NoiseModel model{bad};
  chance::AffineRandomScalar f;
  f.b = Eigen::VectorXd::Ones(2);
  f.c = 0.0;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  try {
    chance::monte_carlo_probability(f, x, model, 1000, 0);
    FAIL("expected cholesky_failure");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::cholesky_failure);
  }
  try {
    chance::relax_chance_ge(f, x, model, 1.0, 0.5);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::non_psd);
  }
}

TEST_CASE("affine covariance evaluation") {
  Eigen::MatrixXd sigma0 = Eigen::MatrixXd::Identity(2, 2);
  std::vector<Eigen::MatrixXd> linear(2, Eigen::MatrixXd::Zero(2, 2));
  linear[0](0, 0) = 1.0;
  const chance::NoiseModel model{sigma0, linear};
  Eigen::VectorXd x(2);
  x << 0.5, 9.0;
  const Eigen::MatrixXd sigma = model.covariance(x);
  CHECK(sigma(0, 0) == doctest::Approx(1.5));
  CHECK(sigma(1, 1) == doctest::Approx(1.0));
  CHECK_FALSE(model.is_constant());
}

namespace {

struct RandomInstance {
  chance::AffineRandomScalar f;
  Eigen::VectorXd x;
  chance::NoiseModel sigma;
  double t = 1.0;
  double eta = 0.5;
};

RandomInstance random_certified_instance(css::Rng& rng) {
  for (;;) {
    const int dim = 1 + static_cast<int>(rng.next_u64() % 3);
    RandomInstance inst;
    inst.f.b.resize(dim);
    inst.x.resize(dim);
    for (int i = 0; i < dim; ++i) {
      inst.f.b[i] = rng.normal();
      inst.x[i] = rng.normal();
    }
    Eigen::MatrixXd l(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) l(i, j) = 0.4 * rng.normal();
    }
    inst.sigma = chance::NoiseModel(l * l.transpose());
    inst.t = 0.1 * std::pow(100.0, rng.uniform());  // log-uniform in [0.1, 10]
    inst.eta = 0.01 + 0.98 * rng.uniform();
    // Pull the mean down until the certificate has a chance to hold.
    inst.f.c = -inst.f.b.dot(inst.x) - inst.t - rng.uniform() * inst.t * std::sqrt(inst.eta);
    if (chance::relax_chance_ge(inst.f, inst.x, inst.sigma, inst.t, inst.eta) <= 0.0) {
      return inst;
    }
  }
}

}  // namespace

TEST_CASE("certified instances respect the budget empirically") {
  css::Rng rng(515);
  for (int trial = 0; trial < 100; ++trial) {
    const RandomInstance inst = random_certified_instance(rng);
    const auto mc = chance::monte_carlo_probability(inst.f, inst.x, inst.sigma, 20000,
                                                    1000 + static_cast<std::uint64_t>(trial));
    CHECK(mc.estimate <= inst.eta + 3.0 * mc.wilson_halfwidth);
  }
}

TEST_CASE("residual monotonicity") {
  css::Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const double t = 0.1 + 5.0 * rng.uniform();
    const double var = rng.uniform();
    const double eta = rng.uniform();
    const double mean = -t + 4.0 * rng.uniform();  // mean >= -t
    const double bump = rng.uniform();
    CHECK(chance::chebyshev_residual(mean + bump, var, t, eta) >=
          chance::chebyshev_residual(mean, var, t, eta) - 1e-12);
    // Nonincreasing in eta.
    const double eta2 = eta + (1.0 - eta) * rng.uniform();
    CHECK(chance::chebyshev_residual(mean, var, t, eta2) <=
          chance::chebyshev_residual(mean, var, t, eta) + 1e-12);
  }
}

TEST_CASE("residual sign is scale consistent") {
  css::Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    const double mean = 4.0 * rng.normal();
    const double var = rng.uniform();
    const double t = 0.1 + 3.0 * rng.uniform();
    const double eta = 0.05 + 0.9 * rng.uniform();
    const double s = 0.1 + 10.0 * rng.uniform();
    const double base = chance::chebyshev_residual(mean, var, t, eta);
    const double scaled = chance::chebyshev_residual(s * mean, s * s * var, s * t, eta);
    CHECK(scaled == doctest::Approx(s * s * base).epsilon(1e-9));
  }
}
