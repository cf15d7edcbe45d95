#pragma once

// The four-step shot sequence and the estimators built on it.
//
//   i)   project the nuclear spin by a repetitive readout; its class is the
//        initial state of the shot,
//   ii)  green reset then an orange pulse to test the charge state; the shot
//        is kept only if the count clears a one-sided high threshold,
//   iii) an RF pulse of length tau rotates the nuclear spin, which only
//        happens if the NV really is NV- (RF is off-resonant in NV0),
//   iv)  read the nuclear spin again. Every shot yields a definite class.
//
// Q(0, tau) is the fraction of accepted shots whose final class equals the
// initial one. Shots are independent given their stream, so every estimate
// is identical for any worker count.

#include "tbi/analysis.hpp"
#include "tbi/dynamics.hpp"
#include "tbi/photophysics.hpp"
#include "tbi/readout.hpp"
#include "tbi/rng.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace tbi::protocol {

using readout::NuclearState;

enum class InitPolicy : std::uint8_t {
  Symmetric,         // shots initialized in the non-target class count as the complementary Q
  DiscardNonTarget,  // only shots initialized in target_init are used
};

struct ExperimentConfig {
  dynamics::RabiParams rabi;
  readout::ReadoutConfig readout;
  photophysics::PhotophysicsConfig photophysics = photophysics::PhotophysicsConfig::defaults();
  photophysics::IlluminationSetting charge_illumination = photophysics::IlluminationSetting::orange_default();
  photophysics::IlluminationSetting reset_illumination = photophysics::IlluminationSetting::green_default();
  double charge_pulse = 8e-3;  // s
  readout::ThresholdObjective charge_threshold_objective = readout::ThresholdObjective::OneSidedBright;
  double charge_min_acceptance = 0.5;
  std::optional<std::int64_t> charge_threshold;  // derived from the objective when unset
  /// Probability that the RF pulse has no effect on a shot that is truly
  /// NV-: residual m_S != 0 population and electron T1 decay during the
  /// charge pulse. The spin then stays put, which raises Q.
  double baseline_shift = 0.0;
  int batch_size = 100;
  InitPolicy init_policy = InitPolicy::Symmetric;
  NuclearState target_init = NuclearState::MPlus1;
  double prior_plus1 = 0.5;  // population of m_I = +1 before the initializing readout

  void validate() const;
  std::int64_t resolved_charge_threshold() const;

  /// Perfect readout, perfect charge initialization, no baseline shift.
  static ExperimentConfig ideal(const dynamics::RabiParams& rabi);
};

struct ShotRecord {
  double tau = 0.0;
  NuclearState init_state = NuclearState::MPlus1;  // classified
  std::int64_t init_counts = 0;
  std::int64_t charge_counts = 0;
  bool charge_accepted = false;
  std::int64_t final_counts = 0;
  NuclearState final_state_classified = NuclearState::MPlus1;
  NuclearState true_final_state = NuclearState::MPlus1;
  photophysics::ChargeState true_charge_state = photophysics::ChargeState::NvMinus;

  bool survived() const { return final_state_classified == init_state; }
};

ShotRecord run_shot(double tau, const ExperimentConfig& config, std::int64_t charge_threshold, Rng& rng);
inline ShotRecord run_shot(double tau, const ExperimentConfig& config, Rng& rng) {
  return run_shot(tau, config, config.resolved_charge_threshold(), rng);
}

/// Shot i uses key.stream(i).
std::vector<ShotRecord> run_shots(double tau, std::size_t n_shots, const ExperimentConfig& config,
                                  const StreamKey& key, unsigned workers = 1);

struct QEstimate {
  double tau = 0.0;
  double q_hat = 0.0;
  double stderr_binomial = 0.0;
  double stderr_batch = 0.0;  // standard error of the sub-ensemble means
  std::size_t n_used = 0;
  std::size_t n_discarded = 0;  // failed the charge test or excluded by the init policy
  std::size_t n_batches = 0;
};

/// Aggregates shots in index order. Throws InsufficientDataError when fewer
/// than two complete batches survive post-selection.
QEstimate summarize_shots(std::span<const ShotRecord> shots, const ExperimentConfig& config);

/// Throws DomainError when n_shots < 10 * batch_size.
QEstimate estimate_q(double tau, std::size_t n_shots, const ExperimentConfig& config, const StreamKey& key,
                     unsigned workers = 1);

/// Expected Q for this configuration is offset + slope * survival(tau). The
/// readout confusion with nuclear flips and the charge acceptance are
/// estimated by Monte Carlo on a fixed stream; without flips the readout
/// part is exact.
struct ShotModel {
  double offset = 0.0;
  double slope = 1.0;
  double acceptance = 1.0;        // P(shot passes the charge test and the init policy)
  double p_nv_minus_given_accept = 1.0;

  double expected_q(double survival) const { return offset + slope * survival; }
  /// Inverts the model: survival estimate from a raw Q estimate.
  double corrected(double q) const { return (q - offset) / slope; }
  analysis::CosineFit expected_fit(double omega) const;
};

ShotModel shot_model(const ExperimentConfig& config, std::uint64_t seed = 0x5eed, std::size_t samples = 400000);

struct TbiResult {
  double t = 0.0;
  QEstimate q_t;
  QEstimate q_2t;
  double b = 0.0;
  double b_stderr = 0.0;        // delta method, binomial variances
  double b_stderr_batch = 0.0;  // delta method, sub-ensemble variances
  double n_sigma = 0.0;
  double k_sigma = 3.0;
  bool violation = false;       // b + k_sigma * b_stderr < 0
  std::size_t shots_discarded = 0;
  // Readout-corrected survival estimates via ShotModel::corrected.
  double q_t_corrected = 0.0;
  double q_2t_corrected = 0.0;
  double b_corrected = 0.0;
};

/// q(t) and q(2t) come from independent stream families.
TbiResult run_tbi_experiment(double t, std::size_t n_shots_t, std::size_t n_shots_2t, const ExperimentConfig& config,
                             const StreamKey& key, unsigned workers = 1, double k_sigma = 3.0,
                             const ShotModel* model = nullptr);

/// One estimate_q per grid point; point i uses key.child(i).
std::vector<QEstimate> rabi_scan(std::span<const double> tau_grid, std::size_t n_shots_per_point,
                                 const ExperimentConfig& config, const StreamKey& key, unsigned workers = 1);

std::vector<analysis::RabiPoint> to_rabi_points(std::span<const QEstimate> scan);

struct ShotPlan {
  std::size_t n_t = 0;
  std::size_t n_2t = 0;
};

/// Smallest equal n with sqrt((q2(1-q2) + 4 q1^2 q1(1-q1)) / n) <= target.
ShotPlan required_shots(double q_t, double q_2t, double target_stderr);

/// Raw shot counts that yield the required post-selected counts on average.
ShotPlan plan_raw_shots(const ShotPlan& used, double acceptance);

/// Bisection on baseline_shift in [0, 0.2] so that the minimum of the Bell
/// curve of the model-expected cosine equals target_min_b. Throws
/// CalibrationError when the target is outside the reachable range.
double tune_baseline_shift(const ExperimentConfig& config, double target_min_b, std::uint64_t seed = 0x5eed);

/// Readout calibrated to F^2 = 0.91 (bright/dark ratio 3, 2000 repeats),
/// default photophysics, baseline_shift tuned to a fit-curve Bell minimum of
/// -0.209.
ExperimentConfig paper_calibrated_config(const dynamics::RabiParams& rabi);

struct RedDot {
  double t = 0.0;      // minimizer of the fit-derived Bell curve
  double b = 0.0;
  double q_t = 0.0;    // model-expected Q at t and 2t
  double q_2t = 0.0;
};

/// Location of the deepest violation of the model-expected Rabi curve.
RedDot expected_red_dot(const ExperimentConfig& config, const ShotModel& model);

}  // namespace tbi::protocol
