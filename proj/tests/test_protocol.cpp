#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "tbi/dynamics.hpp"
#include "tbi/error.hpp"
#include "tbi/protocol.hpp"

#include <cmath>
#include <numbers>
#include <vector>

using namespace tbi;
using namespace tbi::protocol;

namespace {

const dynamics::RabiParams kRabi{2.0 * std::numbers::pi * 1e4, 0.0, 0.0};

const ExperimentConfig& paper() {
  static const ExperimentConfig cfg = paper_calibrated_config(kRabi);
  return cfg;
}

}  // namespace

TEST_CASE("experiment config validation") {
  auto cfg = ExperimentConfig::ideal(kRabi);
  CHECK_NOTHROW(cfg.validate());
  cfg.baseline_shift = 0.3;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = ExperimentConfig::ideal(kRabi);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = ExperimentConfig::ideal(kRabi);
  cfg.prior_plus1 = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("ideal pipeline: every shot kept, Q matches the survival probability") {
  const auto cfg = ExperimentConfig::ideal(kRabi);
  const StreamKey key{99, hash_label("test")};
  for (double wt : {0.0, 0.7, 2.1, std::numbers::pi}) {
    const double tau = wt / kRabi.omega;
    const auto q = estimate_q(tau, 20000, cfg, key.child(static_cast<std::uint64_t>(wt * 1000)));
    const double truth = dynamics::survival_probability(kRabi, tau);
    CHECK(q.n_discarded == 0);
    CHECK(q.n_used == 20000);
    CHECK(q.n_batches == 200);
    CHECK(std::abs(q.q_hat - truth) <= 3.0 * std::sqrt(truth * (1.0 - truth) / 20000.0) + 1e-12);
  }
}

TEST_CASE("estimates are independent of the worker count") {
  const auto& cfg = paper();
  const StreamKey key{7, hash_label("workers")};
  const auto a = estimate_q(1.2e-5, 5000, cfg, key, 1);
  const auto b = estimate_q(1.2e-5, 5000, cfg, key, 4);
  CHECK(a.q_hat == b.q_hat);
  CHECK(a.stderr_batch == b.stderr_batch);
  CHECK(a.n_used == b.n_used);

  const auto shots = run_shots(1.2e-5, 5000, cfg, key, 3);
  const auto s = summarize_shots(shots, cfg);
  CHECK(s.q_hat == a.q_hat);
  CHECK(s.n_discarded == a.n_discarded);
}

TEST_CASE("estimate_q input contract") {
  const auto cfg = ExperimentConfig::ideal(kRabi);
  const StreamKey key{1, 2};
  CHECK_THROWS_AS(estimate_q(1e-5, 999, cfg, key), DomainError);
  CHECK_THROWS_AS(estimate_q(-1.0, 5000, cfg, key), DomainError);

  // Nearly every shot rejected: fewer than two complete batches remain.
  auto strict = cfg;
  strict.charge_threshold = 100000;
  CHECK_THROWS_AS(estimate_q(1e-5, 1000, strict, key), InsufficientDataError);
}

TEST_CASE("post-selection discards NV0 shots and the init policy is honoured") {
  const auto& cfg = paper();
  const StreamKey key{3, 4};
  const auto shots = run_shots(1e-5, 4000, cfg, key);
  std::size_t accepted = 0, accepted_minus = 0;
  for (const auto& s : shots) {
    if (!s.charge_accepted) continue;
    ++accepted;
    accepted_minus += s.true_charge_state == photophysics::ChargeState::NvMinus;
  }
  CHECK(accepted > 1000);
  CHECK(double(accepted_minus) / accepted > 0.98);

  auto discard = cfg;
  discard.init_policy = InitPolicy::DiscardNonTarget;
  const auto sym = summarize_shots(shots, cfg);
  const auto only = summarize_shots(shots, discard);
  CHECK(only.n_used < sym.n_used);
  CHECK(only.n_used + only.n_discarded == shots.size());
}

TEST_CASE("shot model predicts the simulated Q") {
  const auto& cfg = paper();
  const auto model = shot_model(cfg);
  CHECK(model.acceptance > 0.2);
  CHECK(model.acceptance < 0.6);
  CHECK(model.slope > 0.0);
  const StreamKey key{5, 6};
  for (double wt : {0.5, 1.5, 3.0}) {
    const double tau = wt / kRabi.omega;
    const auto q = estimate_q(tau, 40000, cfg, key.child(static_cast<std::uint64_t>(wt * 10)));
    const double expected = model.expected_q(dynamics::survival_probability(kRabi, tau));
    CHECK(std::abs(q.q_hat - expected) < 4.0 * q.stderr_binomial);
    CHECK(model.corrected(model.expected_q(0.3)) == doctest::Approx(0.3));
  }
}

TEST_CASE("required_shots and plan_raw_shots") {
  const auto plan = required_shots(2.0 / 3.0, 1.0 / 9.0, 0.0039);
  const double v = (1.0 / 9.0) * (8.0 / 9.0) + 4.0 * std::pow(2.0 / 3.0, 3) * (1.0 / 3.0);
  CHECK(std::sqrt(v / plan.n_t) <= 0.0039);
  CHECK(std::sqrt(v / (plan.n_t - 1)) > 0.0039);
  CHECK(plan.n_t == plan.n_2t);
  const auto raw = plan_raw_shots(plan, 0.5);
  CHECK(raw.n_t >= 2 * plan.n_t);
  CHECK_THROWS_AS(required_shots(0.0, 0.5, 0.01), DomainError);
  CHECK_THROWS_AS(required_shots(0.5, 0.5, 0.0), DomainError);
}

TEST_CASE("paper calibration hits its targets") {
  const auto& cfg = paper();
  const auto f = readout::threshold_fidelity(cfg.readout.mean_photons_dark, cfg.readout.mean_photons_bright, 0.5,
                                             cfg.readout.threshold);
  CHECK(f.f_squared == doctest::Approx(0.91).epsilon(0.005 / 0.91));
  CHECK(cfg.baseline_shift > 0.0);
  CHECK(cfg.baseline_shift < 0.2);
  const auto dot = expected_red_dot(cfg, shot_model(cfg));
  CHECK(dot.b == doctest::Approx(-0.209).epsilon(1e-6));
  CHECK(dot.t * kRabi.omega > 0.0);
  CHECK(dot.t * kRabi.omega <= std::numbers::pi);
  CHECK_THROWS_AS(tune_baseline_shift(cfg, -0.5), CalibrationError);
}

TEST_CASE("ideal TBI experiment violates near -1/3") {
  const auto cfg = ExperimentConfig::ideal(kRabi);
  const double t = std::acos(1.0 / 3.0) / kRabi.omega;
  const auto r = run_tbi_experiment(t, 20000, 20000, cfg, StreamKey{11, 12});
  CHECK(r.violation);
  CHECK(std::abs(r.b + 1.0 / 3.0) < 4.0 * r.b_stderr);
  CHECK(r.b_stderr_batch > 0.5 * r.b_stderr);
  CHECK(r.b_stderr_batch < 2.0 * r.b_stderr);
  CHECK(r.shots_discarded == 0);
  CHECK_THROWS_AS(run_tbi_experiment(t, 0, 100, cfg, StreamKey{}), DomainError);
}

TEST_CASE("no violation above the critical noise") {
  auto rabi = kRabi;
  rabi.gamma_phi = 1.2 * std::sqrt(2.0) * kRabi.omega;
  const auto cfg = ExperimentConfig::ideal(rabi);
  const auto m = dynamics::minimize_bell(rabi, 4.0 * std::numbers::pi / rabi.omega);
  const auto r = run_tbi_experiment(m.t, 20000, 20000, cfg, StreamKey{13, 14});
  CHECK_FALSE(r.violation);
}

TEST_CASE("rabi scan uses one child stream per point") {
  const auto cfg = ExperimentConfig::ideal(kRabi);
  const std::vector<double> grid{0.0, 1e-5, 2e-5};
  const StreamKey key{21, 22};
  const auto scan = rabi_scan(grid, 2000, cfg, key);
  REQUIRE(scan.size() == 3);
  const auto single = estimate_q(grid[1], 2000, cfg, key.child(std::uint64_t{1}));
  CHECK(scan[1].q_hat == single.q_hat);
  const auto pts = to_rabi_points(scan);
  CHECK(pts[2].tau == grid[2]);
  CHECK(pts[2].std_error == scan[2].stderr_binomial);
}
