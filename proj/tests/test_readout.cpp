#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tbi/error.hpp"
#include "tbi/readout.hpp"
#include "tbi/rng.hpp"

#include <boost/math/distributions/poisson.hpp>

#include <cmath>
#include <random>
#include <vector>

using namespace tbi;
using namespace tbi::readout;

namespace {

ReadoutConfig config(double dark, double bright, double flip = 0.0, std::int64_t threshold = 0) {
  ReadoutConfig c;
  c.n_repeats = 2000;
  c.mean_photons_dark = dark;
  c.mean_photons_bright = bright;
  c.flip_prob_per_repeat = flip;
  c.threshold = threshold;
  return c;
}

double binomial_sigma(double p, int n) { return std::sqrt(p * (1.0 - p) / n); }

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS(config(5.0, 5.0).validate(), ValidationError);
  CHECK_THROWS_AS(config(-1.0, 5.0).validate(), ValidationError);
  CHECK_THROWS_AS(config(1.0, 5.0, 1.5).validate(), ValidationError);
  auto c = config(1.0, 5.0);
  c.n_repeats = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  CHECK_NOTHROW(config(0.0, 5.0).validate());
}

TEST_CASE("simulate_readout without flips") {
  Rng rng(1);
  const auto dark = config(0.0, 40.0);
  for (int i = 0; i < 100; ++i) {
    const auto r = simulate_readout(NuclearState::MPlus1, dark, rng);
    CHECK(r.photon_count == 0);
    CHECK(r.final_state == NuclearState::MPlus1);
  }
  const int n = 10000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += simulate_readout(NuclearState::MOther, dark, rng).photon_count;
  CHECK(std::abs(sum / n - 40.0) < 3.0 * std::sqrt(40.0 / n));
}

TEST_CASE("flip chain: final state parity") {
  Rng rng(2);
  const double p = 0.5 / 2000.0;
  const auto c = config(5.0, 15.0, p);
  const int n = 10000;
  int differ = 0;
  for (int i = 0; i < n; ++i) differ += simulate_readout(NuclearState::MPlus1, c, rng).final_state != NuclearState::MPlus1;
  // The state differs after an odd number of flips: (1 - (1 - 2p)^N) / 2.
  const double expected = 0.5 * (1.0 - std::pow(1.0 - 2.0 * p, 2000));
  CHECK(std::abs(differ / double(n) - expected) < 3.0 * binomial_sigma(expected, n));
}

TEST_CASE("more repeats push the outcome toward the flip-chain stationary mix") {
  Rng rng(3);
  auto c = config(5.0, 15.0, 2e-4, 9);
  const int n = 20000;
  auto high_fraction = [&](int repeats) {
    c.n_repeats = repeats;
    int high = 0;
    for (int i = 0; i < n; ++i) high += is_high(simulate_readout(NuclearState::MPlus1, c, rng).photon_count, 9);
    return high / double(n);
  };
  CHECK(high_fraction(20000) > high_fraction(2000) + 3.0 * binomial_sigma(0.1, n));
}

TEST_CASE("build_histogram") {
  const std::vector<std::int64_t> fives(10, 5);
  const auto h = build_histogram(fives, 1);
  REQUIRE(h.counts.size() == 1);
  CHECK(h.counts[0] == 10);
  CHECK(h.bin_edges == std::vector<std::int64_t>{5, 6});

  const std::vector<std::int64_t> mixed{0, 1, 2, 3, 7};
  const auto w = build_histogram(mixed, 2);
  CHECK(w.bin_edges.front() == 0);
  CHECK(w.bin_edges.back() == 8);
  std::int64_t total = 0;
  for (auto v : w.counts) total += v;
  CHECK(total == w.n_total);
  for (std::size_t i = 0; i + 1 < w.bin_edges.size(); ++i) CHECK(w.bin_edges[i] < w.bin_edges[i + 1]);

  const std::vector<std::int64_t> empty;
  CHECK_THROWS_AS(build_histogram(empty, 1), DomainError);
}

TEST_CASE("bimodal mixture has local maxima near both means") {
  Rng rng(4);
  std::vector<std::int64_t> counts;
  for (int i = 0; i < 100000; ++i) {
    const double lam = rng.bernoulli(0.5) ? 20.0 : 60.0;
    counts.push_back(std::poisson_distribution<std::int64_t>(lam)(rng));
  }
  const auto h = build_histogram(counts, 1);
  auto peak_near = [&](std::int64_t centre) {
    std::int64_t best = 0, at = 0;
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      const auto x = h.bin_edges[i];
      if (std::abs(x - centre) <= 10 && h.counts[i] > best) {
        best = h.counts[i];
        at = x;
      }
    }
    return at;
  };
  CHECK(std::abs(peak_near(20) - 20) <= 2);
  CHECK(std::abs(peak_near(60) - 60) <= 2);
  std::int64_t valley = h.n_total;
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    if (h.bin_edges[i] > 25 && h.bin_edges[i] < 55) valley = std::min(valley, h.counts[i]);
  CHECK(valley < h.counts[static_cast<std::size_t>(peak_near(20) - h.bin_edges[0])] / 5);
}

TEST_CASE("threshold fidelity against boost Poisson CDF") {
  const boost::math::poisson_distribution<double> dark(12.0), bright(30.0);
  for (std::int64_t th : {0, 5, 12, 20, 29, 50}) {
    const auto f = threshold_fidelity(12.0, 30.0, 0.5, th);
    CHECK(f.f_assign_dark == doctest::Approx(boost::math::cdf(dark, double(th))).epsilon(1e-12));
    CHECK(f.f_assign_bright == doctest::Approx(1.0 - boost::math::cdf(bright, double(th))).epsilon(1e-12));
    CHECK(f.f_squared == doctest::Approx(f.f_assign_dark * f.f_assign_bright));
  }
  const auto degenerate = threshold_fidelity(0.0, 7.0, 0.5, 0);
  CHECK(degenerate.f_assign_dark == 1.0);
  CHECK(degenerate.f_assign_bright == doctest::Approx(1.0 - std::exp(-7.0)));

  const auto prior = threshold_fidelity(12.0, 30.0, 0.3, 20, FidelityDefinition::PriorWeightedSquared);
  const double one = 0.3 * prior.f_assign_dark + 0.7 * prior.f_assign_bright;
  CHECK(prior.f_squared == doctest::Approx(one * one));
}

TEST_CASE("fidelity monotonicity in the threshold") {
  double prev_dark = -1.0, prev_bright = 2.0;
  for (std::int64_t th = 0; th < 80; ++th) {
    const auto f = threshold_fidelity(15.0, 45.0, 0.5, th);
    CHECK(f.f_assign_dark >= prev_dark);
    CHECK(f.f_assign_bright <= prev_bright);
    prev_dark = f.f_assign_dark;
    prev_bright = f.f_assign_bright;
  }
}

TEST_CASE("optimal threshold: exhaustive-search oracle") {
  const auto th = optimal_threshold(20.0, 60.0, 0.5, ThresholdObjective::Balanced);
  const double crossing = (60.0 - 20.0) / std::log(3.0);
  CHECK(std::abs(double(th) - crossing) <= 2.0);
  double best = -1.0;
  std::int64_t arg = -1;
  for (std::int64_t t = 0; t <= 200; ++t) {
    const double v = threshold_fidelity(20.0, 60.0, 0.5, t).f_squared;
    if (v > best) {
      best = v;
      arg = t;
    }
  }
  CHECK(th == arg);

  // Equal means: F_dark F_bright = F (1 - F) is bounded by 1/4 at every threshold.
  const auto equal = optimal_threshold(10.0, 10.0, 0.5, ThresholdObjective::Balanced);
  const double equal_best = threshold_fidelity(10.0, 10.0, 0.5, equal).f_squared;
  for (std::int64_t t = 0; t < 40; ++t) {
    const double v = threshold_fidelity(10.0, 10.0, 0.5, t).f_squared;
    CHECK(v <= 0.25 + 1e-12);
    CHECK(v <= equal_best);
  }
}

TEST_CASE("one-sided objective improves bright-class purity") {
  auto purity = [](std::int64_t th) {
    const auto f = threshold_fidelity(2.0, 20.0, 0.3, th);
    return 0.7 * f.f_assign_bright / (0.7 * f.f_assign_bright + 0.3 * (1.0 - f.f_assign_dark));
  };
  const auto balanced = optimal_threshold(2.0, 20.0, 0.3, ThresholdObjective::Balanced);
  const auto one_sided = optimal_threshold(2.0, 20.0, 0.3, ThresholdObjective::OneSidedBright, 0.5);
  CHECK(purity(one_sided) >= purity(balanced));
  CHECK(threshold_fidelity(2.0, 20.0, 0.3, one_sided).f_assign_bright >= 0.5);
  CHECK_THROWS_AS(optimal_threshold(2.0, 20.0, 0.3, ThresholdObjective::OneSidedBright, 1.0), ConstraintError);
}

TEST_CASE("classification boundary belongs to the low class") {
  CHECK(classify_nuclear(0, 0) == NuclearState::MPlus1);
  CHECK(classify_nuclear(7, 7) == NuclearState::MPlus1);
  CHECK(classify_nuclear(8, 7) == NuclearState::MOther);
  CHECK(classify_charge(7, 7) == photophysics::ChargeState::NvZero);
  CHECK(classify_charge(8, 7) == photophysics::ChargeState::NvMinus);
}

TEST_CASE("calibration round trip") {
  const auto cal = calibrate_photon_rates(0.91, 2000, 3.0);
  CHECK(cal.mean_photons_bright == doctest::Approx(3.0 * cal.mean_photons_dark));
  const auto f = threshold_fidelity(cal.mean_photons_dark, cal.mean_photons_bright, 0.5, cal.threshold);
  CHECK(std::abs(f.f_squared - 0.91) < 0.005);
  CHECK(cal.per_repeat_dark == doctest::Approx(cal.mean_photons_dark / 2000.0));

  const auto near_degenerate = calibrate_photon_rates(0.25, 2000, 1.01);
  CHECK(near_degenerate.mean_photons_bright / near_degenerate.mean_photons_dark == doctest::Approx(1.01));

  CHECK_THROWS_AS(calibrate_photon_rates(1.0, 2000, 3.0), DomainError);
  CHECK_THROWS_AS(calibrate_photon_rates(0.91, 2000, 1.0), DomainError);
  CHECK_THROWS_AS(calibrate_photon_rates(0.999999999, 2000, 1.0001), CalibrationError);
}

TEST_CASE("Monte Carlo classification matches analytic per-class fidelities") {
  const auto cal = calibrate_photon_rates(0.91, 2000, 3.0);
  const auto c = config(cal.mean_photons_dark, cal.mean_photons_bright, 0.0, cal.threshold);
  const auto f = threshold_fidelity(cal.mean_photons_dark, cal.mean_photons_bright, 0.5, cal.threshold);
  Rng rng(6);
  const int n = 10000;
  int ok_dark = 0, ok_bright = 0;
  for (int i = 0; i < n; ++i) {
    ok_dark += classify_nuclear(simulate_readout(NuclearState::MPlus1, c, rng).photon_count, c.threshold) ==
               NuclearState::MPlus1;
    ok_bright += classify_nuclear(simulate_readout(NuclearState::MOther, c, rng).photon_count, c.threshold) ==
                 NuclearState::MOther;
  }
  CHECK(std::abs(ok_dark / double(n) - f.f_assign_dark) < 3.0 * binomial_sigma(f.f_assign_dark, n));
  CHECK(std::abs(ok_bright / double(n) - f.f_assign_bright) < 3.0 * binomial_sigma(f.f_assign_bright, n));
}
