#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tbi/dynamics.hpp"
#include "tbi/error.hpp"
#include "tbi/rng.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace tbi;
using namespace tbi::dynamics;

namespace {

// Brute-force grid minimum of B, independent of minimize_bell.
double grid_min_b(const RabiParams& p, double t_max, int n) {
  double best = 1.0;
  for (int i = 1; i <= n; ++i) best = std::min(best, bell_value(p, t_max * i / n));
  return best;
}

}  // namespace

TEST_CASE("density matrix invariants") {
  CHECK_NOTHROW(DensityMatrix::excited());
  CHECK(DensityMatrix::excited().population_one() == doctest::Approx(1.0));
  CHECK(DensityMatrix::ground().population_one() == doctest::Approx(0.0));
  CHECK(DensityMatrix::maximally_mixed().population_one() == doctest::Approx(0.5));

  Eigen::Matrix2cd bad;
  bad << 1.0, 0.0, 0.0, 0.5;
  CHECK_THROWS_AS(DensityMatrix{bad}, ValidationError);
  bad << 1.2, 0.0, 0.0, -0.2;
  CHECK_THROWS_AS(DensityMatrix{bad}, ValidationError);
  bad << 0.5, std::complex<double>(0.1, 0.1), 0.0, 0.5;
  CHECK_THROWS_AS(DensityMatrix{bad}, ValidationError);
  CHECK_THROWS_AS(DensityMatrix::from_bloch({1.0, 1.0, 0.0}), ValidationError);
}

TEST_CASE("rabi parameter validation") {
  CHECK_THROWS_AS((RabiParams{0.0, 0.0, 0.0}).validate(), ValidationError);
  CHECK_THROWS_AS((RabiParams{1.0, -1.0, 0.0}).validate(), ValidationError);
  CHECK_THROWS_AS((RabiParams{1.0, 0.0, std::nan("")}).validate(), ValidationError);
  CHECK_NOTHROW((RabiParams{1.0, 0.1, 0.2}).validate());
}

TEST_CASE("survival probability closed form") {
  const RabiParams ideal{1.0, 0.0, 0.0};
  CHECK(survival_probability(ideal, 0.0) == doctest::Approx(1.0));
  CHECK(survival_probability(ideal, std::numbers::pi) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(survival_probability(ideal, std::numbers::pi / 2.0) == doctest::Approx(0.5));

  const RabiParams damped{1.0, 100.0, 0.0};
  CHECK(survival_probability(damped, 1.0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(survival_probability(ideal, -1.0), DomainError);
}

TEST_CASE("master equation integrator reproduces the closed form") {
  Rng rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const RabiParams p{0.5 + 2.0 * rng.uniform(), 0.3 * rng.uniform(), 0.3 * rng.uniform()};
    for (double t : {0.3, 1.7, 4.2}) {
      const auto rho = evolve_master_equation(DensityMatrix::excited(), p, t, 1e-3);
      CHECK(rho.population_one() == doctest::Approx(survival_probability(p, t)).epsilon(1e-9));
    }
  }
}

TEST_CASE("integrator keeps the state physical") {
  const RabiParams p{3.0, 0.5, 1.0};
  auto rho = DensityMatrix::from_bloch({0.3, -0.4, 0.5});
  for (int i = 0; i < 50; ++i) {
    rho = evolve_master_equation(rho, p, 0.2, 1e-3);
    CHECK(rho.bloch().norm() <= 1.0 + 1e-12);
    CHECK(rho.matrix().trace().real() == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(evolve_master_equation(rho, p, 1.0, 0.0), DomainError);
}

TEST_CASE("bell functional") {
  CHECK(bell_functional(2.0 / 3.0, 1.0 / 9.0) == doctest::Approx(-1.0 / 3.0));
  CHECK(bell_functional(1.0, 1.0) == doctest::Approx(0.0));
  CHECK(bell_functional(0.5, 0.25) == doctest::Approx(0.0));
  CHECK_THROWS_AS(bell_functional(1.1, 0.5), DomainError);
  CHECK_THROWS_AS(bell_functional(0.5, -0.1), DomainError);
}

TEST_CASE("ideal bell curve minimum matches the closed-form oracle") {
  // B = c^2 - (1 + c)^2 / 4 with c = cos(omega t); minimum -1/3 at c = 1/3.
  const RabiParams p{1.0, 0.0, 0.0};
  std::vector<double> grid;
  for (int i = 1; i <= 10000; ++i) grid.push_back(2.0 * std::numbers::pi * i / 10000.0);
  const auto curve = bell_curve(p, grid);
  REQUIRE(curve.size() == grid.size());
  auto best = curve.front();
  for (const auto& pt : curve) {
    const double c = std::cos(pt.t);
    CHECK(pt.b == doctest::Approx(c * c - 0.25 * (1.0 + c) * (1.0 + c)).epsilon(1e-12).scale(1.0));
    if (pt.b < best.b) best = pt;
  }
  CHECK(best.b == doctest::Approx(-1.0 / 3.0).epsilon(1e-6));
  CHECK(best.q_t == doctest::Approx(2.0 / 3.0).epsilon(1e-3));

  const auto refined = minimize_bell(p, 2.0 * std::numbers::pi);
  CHECK(refined.b == doctest::Approx(-1.0 / 3.0).epsilon(1e-10));
  CHECK(std::cos(refined.t) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("bell curve grid contract") {
  const RabiParams p{1.0, 0.0, 0.0};
  const std::vector<double> empty;
  try {
    (void)bell_curve(p, empty);
    FAIL("no throw");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GridEmpty);
  }
  const std::vector<double> unsorted{1.0, 0.5};
  CHECK_THROWS_AS(bell_curve(p, unsorted), DomainError);
  const std::vector<double> negative{-1.0, 0.5};
  CHECK_THROWS_AS(bell_curve(p, negative), DomainError);
}

TEST_CASE("bell_value agrees with the functional of the survival probability") {
  const RabiParams p{2.0, 0.7, 0.2};
  for (double t : {1e-4, 0.01, 0.3, 1.0, 2.5}) {
    const double direct = bell_functional(survival_probability(p, t), survival_probability(p, 2.0 * t));
    CHECK(bell_value(p, t) == doctest::Approx(direct).epsilon(1e-12));
  }
}

TEST_CASE("critical noise is sqrt(2) omega and matches the grid oracle") {
  const auto cn = critical_noise(1.0, 1e-9);
  CHECK(cn.gamma_star == doctest::Approx(std::sqrt(2.0)).epsilon(1e-8));
  CHECK(cn.bracket_hi - cn.bracket_lo <= 1e-9);
  // Just below the threshold the violation survives only at vanishing t and magnitude.
  CHECK(cn.min_b_lo <= 1e-12);
  CHECK(cn.min_b_hi >= -1e-12);

  const double t_max = 4.0 * std::numbers::pi;
  CHECK(grid_min_b({1.0, 0.9 * cn.gamma_star, 0.0}, t_max, 200000) < -1e-4);
  CHECK(grid_min_b({1.0, 1.1 * cn.gamma_star, 0.0}, t_max, 200000) > -1e-6);
}

TEST_CASE("critical noise contracts") {
  const auto coarse = critical_noise(1.0, 1e-6);
  const auto fine = critical_noise(1.0, 1e-7);
  CHECK(std::abs(fine.gamma_star - coarse.gamma_star) < 1e-6);

  const auto a = critical_noise(1.0, 1e-9);
  const auto b = critical_noise(2.0, 2e-9);
  CHECK(b.gamma_star == doctest::Approx(2.0 * a.gamma_star).epsilon(2e-9));

  CHECK_THROWS_AS(critical_noise(0.0, 1e-6), DomainError);
  CHECK_THROWS_AS(critical_noise(1.0, 0.0), DomainError);
}

TEST_CASE("stationarity: Q depends only on the time difference") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const RabiParams p{1.0 + rng.uniform(), 0.2 * rng.uniform(), 0.2 * rng.uniform()};
    const std::vector<double> starts{0.0, 1.3, 7.9, 20.0};
    CHECK(stationarity_check(p, 0.8, starts) <= 1e-8);
  }
  const std::vector<double> none;
  CHECK_THROWS_AS(stationarity_check({1.0, 0.0, 0.0}, 1.0, none), DomainError);
}
