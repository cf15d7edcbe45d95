#include "tbi/protocol.hpp"

#include "tbi/error.hpp"
#include "tbi/parallel.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace tbi::protocol {

namespace {

using photophysics::ChargeState;

constexpr std::uint8_t kUsed = 1;
constexpr std::uint8_t kSurvived = 2;

int idx(NuclearState s) { return s == NuclearState::MPlus1 ? 0 : 1; }
NuclearState state_of(int i) { return i == 0 ? NuclearState::MPlus1 : NuclearState::MOther; }

ShotRecord shot_impl(double tau, double survival, const ExperimentConfig& cfg, std::int64_t charge_threshold,
                     const photophysics::ChargeRates& reset_rates, Rng& rng) {
  ShotRecord rec;
  rec.tau = tau;

  // i) initialize by measuring
  const NuclearState prepared = rng.bernoulli(cfg.prior_plus1) ? NuclearState::MPlus1 : NuclearState::MOther;
  const auto init = readout::simulate_readout(prepared, cfg.readout, rng);
  rec.init_counts = init.photon_count;
  rec.init_state = readout::classify_nuclear(init.photon_count, cfg.readout.threshold);
  NuclearState spin = init.final_state;

  // ii) charge state after the green reset, tested by the orange pulse
  const ChargeState reset = photophysics::sample_steady_state(reset_rates, rng);
  const auto charge =
      photophysics::charge_measurement(cfg.photophysics, cfg.charge_illumination, cfg.charge_pulse, rng, reset);
  rec.charge_counts = charge.photon_count;
  rec.charge_accepted = readout::is_high(charge.photon_count, charge_threshold);
  rec.true_charge_state = charge.final_state;

  // iii) RF pulse; ineffective in NV0 and, with probability baseline_shift, in NV- too
  if (charge.final_state == ChargeState::NvMinus && !rng.bernoulli(cfg.baseline_shift)) {
    if (!rng.bernoulli(survival)) spin = readout::flipped(spin);
  }

  // iv) final readout
  const auto fin = readout::simulate_readout(spin, cfg.readout, rng);
  rec.final_counts = fin.photon_count;
  rec.final_state_classified = readout::classify_nuclear(fin.photon_count, cfg.readout.threshold);
  rec.true_final_state = fin.final_state;
  return rec;
}

std::uint8_t flags_of(const ShotRecord& r, const ExperimentConfig& cfg) {
  const bool used = r.charge_accepted &&
                    (cfg.init_policy == InitPolicy::Symmetric || r.init_state == cfg.target_init);
  if (!used) return 0;
  return static_cast<std::uint8_t>(kUsed | (r.survived() ? kSurvived : 0));
}

QEstimate aggregate(double tau, std::span<const std::uint8_t> flags, int batch_size) {
  QEstimate est;
  est.tau = tau;
  std::size_t successes = 0;
  std::size_t in_batch = 0, batch_successes = 0;
  std::vector<double> batch_means;
  for (auto f : flags) {
    if (!(f & kUsed)) {
      ++est.n_discarded;
      continue;
    }
    ++est.n_used;
    const bool s = (f & kSurvived) != 0;
    successes += s;
    batch_successes += s;
    if (++in_batch == static_cast<std::size_t>(batch_size)) {
      batch_means.push_back(static_cast<double>(batch_successes) / batch_size);
      in_batch = 0;
      batch_successes = 0;
    }
  }
  est.n_batches = batch_means.size();
  if (est.n_batches < 2) {
    std::ostringstream os;
    os << "estimate_q: only " << est.n_batches << " complete batch(es) of " << batch_size << " after post-selection ("
       << est.n_used << " of " << flags.size() << " shots used)";
    throw InsufficientDataError(os.str());
  }
  const double n = static_cast<double>(est.n_used);
  est.q_hat = static_cast<double>(successes) / n;
  est.stderr_binomial = std::sqrt(est.q_hat * (1.0 - est.q_hat) / n);
  double mean = 0.0;
  for (double m : batch_means) mean += m;
  mean /= static_cast<double>(batch_means.size());
  double ss = 0.0;
  for (double m : batch_means) ss += (m - mean) * (m - mean);
  const double nb = static_cast<double>(batch_means.size());
  est.stderr_batch = std::sqrt(ss / (nb - 1.0) / nb);
  return est;
}

// Sufficient statistics of one shot, independent of tau and baseline_shift.
struct ShotTables {
  // readout[s][c][f]: P(class c, post-readout state f | true state s)
  std::array<std::array<std::array<double, 2>, 2>, 2> readout{};
  double p_accept = 1.0;
  double p_nv_minus_given_accept = 1.0;
};

ShotTables estimate_tables(const ExperimentConfig& cfg, std::uint64_t seed, std::size_t samples) {
  ShotTables t;
  const auto& rc = cfg.readout;
  if (rc.flip_prob_per_repeat <= 0.0) {
    const auto f = readout::threshold_fidelity(rc.mean_photons_dark, rc.mean_photons_bright, 0.5, rc.threshold);
    t.readout[0][0][0] = f.f_assign_dark;
    t.readout[0][1][0] = 1.0 - f.f_assign_dark;
    t.readout[1][1][1] = f.f_assign_bright;
    t.readout[1][0][1] = 1.0 - f.f_assign_bright;
  } else {
    const StreamKey key{seed, hash_label("shot-model/readout")};
    for (int s = 0; s < 2; ++s) {
      Rng rng = key.stream(static_cast<std::uint64_t>(s));
      for (std::size_t i = 0; i < samples; ++i) {
        const auto out = readout::simulate_readout(state_of(s), rc, rng);
        const int c = idx(readout::classify_nuclear(out.photon_count, rc.threshold));
        t.readout[s][c][idx(out.final_state)] += 1.0;
      }
      for (auto& row : t.readout[s])
        for (auto& v : row) v /= static_cast<double>(samples);
    }
  }

  const auto reset_rates = photophysics::charge_rates(cfg.photophysics, cfg.reset_illumination);
  const std::int64_t th = cfg.resolved_charge_threshold();
  Rng rng = StreamKey{seed, hash_label("shot-model/charge")}.stream(0);
  double accepted = 0.0, accepted_minus = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const auto reset = photophysics::sample_steady_state(reset_rates, rng);
    const auto m = photophysics::charge_measurement(cfg.photophysics, cfg.charge_illumination, cfg.charge_pulse, rng, reset);
    if (readout::is_high(m.photon_count, th)) {
      accepted += 1.0;
      if (m.final_state == ChargeState::NvMinus) accepted_minus += 1.0;
    }
  }
  t.p_accept = accepted / static_cast<double>(samples);
  t.p_nv_minus_given_accept = accepted > 0.0 ? accepted_minus / accepted : 0.0;
  return t;
}

ShotModel model_from_tables(const ShotTables& t, const ExperimentConfig& cfg) {
  const double rho = t.p_nv_minus_given_accept * (1.0 - cfg.baseline_shift);
  std::array<std::array<double, 2>, 2> cls{};  // cls[s][c]
  for (int s = 0; s < 2; ++s)
    for (int c = 0; c < 2; ++c) cls[s][c] = t.readout[s][c][0] + t.readout[s][c][1];

  double w_total = 0.0, w_used = 0.0, off = 0.0, slope = 0.0;
  for (int s0 = 0; s0 < 2; ++s0) {
    const double prior = s0 == 0 ? cfg.prior_plus1 : 1.0 - cfg.prior_plus1;
    for (int c0 = 0; c0 < 2; ++c0)
      for (int s1 = 0; s1 < 2; ++s1) {
        const double w = prior * t.readout[s0][c0][s1];
        w_total += w;
        if (cfg.init_policy == InitPolicy::DiscardNonTarget && state_of(c0) != cfg.target_init) continue;
        w_used += w;
        const double same = cls[s1][c0];
        const double flip = cls[1 - s1][c0];
        off += w * ((1.0 - rho) * same + rho * flip);
        slope += w * rho * (same - flip);
      }
  }
  ShotModel m;
  m.offset = w_used > 0.0 ? off / w_used : 0.0;
  m.slope = w_used > 0.0 ? slope / w_used : 0.0;
  m.acceptance = t.p_accept * (w_total > 0.0 ? w_used / w_total : 0.0);
  m.p_nv_minus_given_accept = t.p_nv_minus_given_accept;
  return m;
}

double expected_min_bell(const ShotModel& m, const ExperimentConfig& cfg) {
  return expected_red_dot(cfg, m).b;
}

}  // namespace

void ExperimentConfig::validate() const {
  rabi.validate();
  readout.validate();
  photophysics.validate();
  charge_illumination.validate();
  reset_illumination.validate();
  if (!(charge_pulse > 0.0)) throw ValidationError("experiment: charge_pulse must be > 0");
  if (!(charge_min_acceptance >= 0.0 && charge_min_acceptance <= 1.0))
    throw ValidationError("experiment: charge_min_acceptance must lie in [0, 1]");
  if (charge_threshold && *charge_threshold < 0) throw ValidationError("experiment: charge_threshold must be >= 0");
  if (!(baseline_shift >= 0.0 && baseline_shift <= 0.2))
    throw ValidationError("experiment: baseline_shift must lie in [0, 0.2]");
  if (batch_size < 1) throw ValidationError("experiment: batch_size must be >= 1");
  if (!(prior_plus1 >= 0.0 && prior_plus1 <= 1.0)) throw ValidationError("experiment: prior_plus1 must lie in [0, 1]");
}

std::int64_t ExperimentConfig::resolved_charge_threshold() const {
  if (charge_threshold) return *charge_threshold;
  const auto photons = photophysics::photon_rates(photophysics, charge_illumination);
  const auto reset = photophysics::charge_rates(photophysics, reset_illumination);
  return readout::optimal_threshold(photons.nv_zero * charge_pulse, photons.nv_minus * charge_pulse,
                                    1.0 - reset.steady_state_nv_minus(), charge_threshold_objective,
                                    charge_min_acceptance);
}

ExperimentConfig ExperimentConfig::ideal(const dynamics::RabiParams& rabi) {
  ExperimentConfig c;
  c.rabi = rabi;
  c.readout.n_repeats = 2000;
  c.readout.mean_photons_dark = 0.0;
  c.readout.mean_photons_bright = 200.0;
  c.readout.flip_prob_per_repeat = 0.0;
  c.readout.threshold = 0;
  c.photophysics = photophysics::PhotophysicsConfig::defaults();
  c.photophysics.green = {0.0, c.photophysics.green.recombination_coeff};
  c.photophysics.orange = {0.0, 0.0};
  c.photophysics.bright_rate = 25000.0;
  c.photophysics.dark_rate = 0.0;
  c.charge_threshold = 0;
  c.baseline_shift = 0.0;
  return c;
}

ShotRecord run_shot(double tau, const ExperimentConfig& config, std::int64_t charge_threshold, Rng& rng) {
  if (!(tau >= 0.0)) throw DomainError("run_shot: tau must be >= 0");
  const double survival = dynamics::survival_probability(config.rabi, tau);
  const auto reset_rates = photophysics::charge_rates(config.photophysics, config.reset_illumination);
  return shot_impl(tau, survival, config, charge_threshold, reset_rates, rng);
}

std::vector<ShotRecord> run_shots(double tau, std::size_t n_shots, const ExperimentConfig& config,
                                  const StreamKey& key, unsigned workers) {
  if (!(tau >= 0.0)) throw DomainError("run_shots: tau must be >= 0");
  config.validate();
  const double survival = dynamics::survival_probability(config.rabi, tau);
  const auto reset_rates = photophysics::charge_rates(config.photophysics, config.reset_illumination);
  const std::int64_t th = config.resolved_charge_threshold();
  std::vector<ShotRecord> shots(n_shots);
  parallel_for(n_shots, workers, [&](std::size_t i) {
    Rng rng = key.stream(i);
    shots[i] = shot_impl(tau, survival, config, th, reset_rates, rng);
  });
  return shots;
}

QEstimate summarize_shots(std::span<const ShotRecord> shots, const ExperimentConfig& config) {
  std::vector<std::uint8_t> flags(shots.size());
  for (std::size_t i = 0; i < shots.size(); ++i) flags[i] = flags_of(shots[i], config);
  return aggregate(shots.empty() ? 0.0 : shots.front().tau, flags, config.batch_size);
}

QEstimate estimate_q(double tau, std::size_t n_shots, const ExperimentConfig& config, const StreamKey& key,
                     unsigned workers) {
  if (!(tau >= 0.0)) throw DomainError("estimate_q: tau must be >= 0");
  config.validate();
  if (n_shots < 10 * static_cast<std::size_t>(config.batch_size)) {
    std::ostringstream os;
    os << "estimate_q: n_shots = " << n_shots << " is below 10 * batch_size = " << 10 * config.batch_size;
    throw DomainError(os.str());
  }
  const double survival = dynamics::survival_probability(config.rabi, tau);
  const auto reset_rates = photophysics::charge_rates(config.photophysics, config.reset_illumination);
  const std::int64_t th = config.resolved_charge_threshold();
  std::vector<std::uint8_t> flags(n_shots);
  parallel_for(n_shots, workers, [&](std::size_t i) {
    Rng rng = key.stream(i);
    flags[i] = flags_of(shot_impl(tau, survival, config, th, reset_rates, rng), config);
  });
  return aggregate(tau, flags, config.batch_size);
}

analysis::CosineFit ShotModel::expected_fit(double omega) const {
  analysis::CosineFit f;
  f.offset = offset + 0.5 * slope;
  f.amplitude = std::abs(0.5 * slope);
  f.phase = slope < 0.0 ? std::numbers::pi : 0.0;
  f.omega = omega;
  f.covariance = Eigen::MatrixXd::Zero(4, 4);
  return f;
}

ShotModel shot_model(const ExperimentConfig& config, std::uint64_t seed, std::size_t samples) {
  config.validate();
  return model_from_tables(estimate_tables(config, seed, samples), config);
}

TbiResult run_tbi_experiment(double t, std::size_t n_shots_t, std::size_t n_shots_2t, const ExperimentConfig& config,
                             const StreamKey& key, unsigned workers, double k_sigma, const ShotModel* model) {
  if (n_shots_t == 0 || n_shots_2t == 0) throw DomainError("run_tbi_experiment: shot counts must be positive");
  TbiResult r;
  r.t = t;
  r.k_sigma = k_sigma;
  r.q_t = estimate_q(t, n_shots_t, config, key.child("q_t"), workers);
  r.q_2t = estimate_q(2.0 * t, n_shots_2t, config, key.child("q_2t"), workers);
  const double q1 = r.q_t.q_hat, q2 = r.q_2t.q_hat;
  r.b = dynamics::bell_functional(q1, q2);
  auto delta = [&](double se1, double se2) { return std::sqrt(se2 * se2 + 4.0 * q1 * q1 * se1 * se1); };
  r.b_stderr = delta(r.q_t.stderr_binomial, r.q_2t.stderr_binomial);
  r.b_stderr_batch = delta(r.q_t.stderr_batch, r.q_2t.stderr_batch);
  if (r.b_stderr > 0.0)
    r.n_sigma = std::abs(r.b) / r.b_stderr;
  else
    r.n_sigma = r.b == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  r.violation = r.b + k_sigma * r.b_stderr < 0.0;
  r.shots_discarded = r.q_t.n_discarded + r.q_2t.n_discarded;
  if (model) {
    r.q_t_corrected = model->corrected(q1);
    r.q_2t_corrected = model->corrected(q2);
    r.b_corrected = r.q_2t_corrected - r.q_t_corrected * r.q_t_corrected;
  }
  return r;
}

std::vector<QEstimate> rabi_scan(std::span<const double> tau_grid, std::size_t n_shots_per_point,
                                 const ExperimentConfig& config, const StreamKey& key, unsigned workers) {
  if (tau_grid.empty()) throw DomainError(ErrorCode::GridEmpty, "rabi_scan: empty tau grid");
  std::vector<QEstimate> out;
  out.reserve(tau_grid.size());
  for (std::size_t i = 0; i < tau_grid.size(); ++i)
    out.push_back(estimate_q(tau_grid[i], n_shots_per_point, config, key.child(i), workers));
  return out;
}

std::vector<analysis::RabiPoint> to_rabi_points(std::span<const QEstimate> scan) {
  std::vector<analysis::RabiPoint> pts;
  pts.reserve(scan.size());
  for (const auto& e : scan) pts.push_back({e.tau, e.q_hat, e.stderr_binomial});
  return pts;
}

ShotPlan required_shots(double q_t, double q_2t, double target_stderr) {
  if (!(q_t > 0.0 && q_t < 1.0 && q_2t > 0.0 && q_2t < 1.0))
    throw DomainError("required_shots: probabilities must lie in (0, 1)");
  if (!(target_stderr > 0.0)) throw DomainError("required_shots: target must be > 0");
  const double v = q_2t * (1.0 - q_2t) + 4.0 * q_t * q_t * q_t * (1.0 - q_t);
  auto ok = [&](double n) { return std::sqrt(v / n) <= target_stderr; };
  auto n = static_cast<std::size_t>(std::max(1.0, std::ceil(v / (target_stderr * target_stderr))));
  while (!ok(static_cast<double>(n))) ++n;
  while (n > 1 && ok(static_cast<double>(n - 1))) --n;
  return {n, n};
}

ShotPlan plan_raw_shots(const ShotPlan& used, double acceptance) {
  if (!(acceptance > 0.0 && acceptance <= 1.0)) throw DomainError("plan_raw_shots: acceptance must lie in (0, 1]");
  auto raw = [&](std::size_t n) { return static_cast<std::size_t>(std::ceil(static_cast<double>(n) / acceptance)); };
  return {raw(used.n_t), raw(used.n_2t)};
}

RedDot expected_red_dot(const ExperimentConfig& config, const ShotModel& model) {
  const auto fit = model.expected_fit(config.rabi.omega);
  analysis::CosineFit damped = fit;
  damped.decay = config.rabi.gamma_eff();
  // First violation window of the oscillation, omega t in (0, pi].
  const auto m = analysis::minimize_bell_from_fit(damped, std::numbers::pi / config.rabi.omega);
  return {m.t, m.b, damped(m.t), damped(2.0 * m.t)};
}

double tune_baseline_shift(const ExperimentConfig& config, double target_min_b, std::uint64_t seed) {
  ExperimentConfig cfg = config;
  cfg.baseline_shift = 0.0;
  cfg.validate();
  const ShotTables tables = estimate_tables(cfg, seed, 400000);
  auto min_b = [&](double shift) {
    cfg.baseline_shift = shift;
    return expected_min_bell(model_from_tables(tables, cfg), cfg);
  };
  double lo = 0.0, hi = 0.2;
  const double b_lo = min_b(lo), b_hi = min_b(hi);
  if (!(b_lo <= target_min_b && target_min_b <= b_hi)) {
    std::ostringstream os;
    os << "tune_baseline_shift: target " << target_min_b << " outside reachable range [" << b_lo << ", " << b_hi
       << "] for baseline_shift in [0, 0.2]";
    throw CalibrationError(os.str());
  }
  for (int i = 0; i < 100 && hi - lo > 1e-12; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (min_b(mid) < target_min_b)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

ExperimentConfig paper_calibrated_config(const dynamics::RabiParams& rabi) {
  ExperimentConfig c;
  c.rabi = rabi;
  const auto cal = readout::calibrate_photon_rates(0.91, 2000, 3.0);
  c.readout.n_repeats = 2000;
  c.readout.mean_photons_dark = cal.mean_photons_dark;
  c.readout.mean_photons_bright = cal.mean_photons_bright;
  c.readout.threshold = cal.threshold;
  c.readout.flip_prob_per_repeat = 1e-6;
  c.photophysics = photophysics::PhotophysicsConfig::defaults();
  c.baseline_shift = tune_baseline_shift(c, -0.209);
  return c;
}

}  // namespace tbi::protocol
