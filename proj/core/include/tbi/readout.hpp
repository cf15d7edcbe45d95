#pragma once

// Repetitive QND readout of the nitrogen nuclear spin. Each of n_repeats
// cycles maps the nuclear state onto the electron spin and reads it out
// optically; only the summed photon count is kept.
//
// Class convention: m_I = +1 is the low-fluorescence (dark) class, the
// aggregated m_I in {0, -1} the bright class. A count equal to the threshold
// belongs to the low class.

#include "tbi/photophysics.hpp"
#include "tbi/rng.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace tbi::readout {

enum class NuclearState : std::uint8_t { MPlus1, MOther };

std::string_view to_string(NuclearState s);
inline NuclearState flipped(NuclearState s) {
  return s == NuclearState::MPlus1 ? NuclearState::MOther : NuclearState::MPlus1;
}

struct ReadoutConfig {
  int n_repeats = 2000;
  double mean_photons_bright = 0.0;  // per full sequence, MOther
  double mean_photons_dark = 0.0;    // per full sequence, MPlus1
  double flip_prob_per_repeat = 0.0;
  std::int64_t threshold = 0;

  void validate() const;
  double mean_for(NuclearState s) const {
    return s == NuclearState::MPlus1 ? mean_photons_dark : mean_photons_bright;
  }
};

struct ReadoutOutcome {
  std::int64_t photon_count = 0;
  NuclearState final_state = NuclearState::MPlus1;
};

/// Flips are drawn per repeat before that repeat's photons; the run is
/// sampled segment-wise (geometric waiting time to the next flip, one
/// Poisson draw per constant-state segment), which has the same law as
/// iterating every repeat.
ReadoutOutcome simulate_readout(NuclearState true_state, const ReadoutConfig& config, Rng& rng);

struct HistogramData {
  std::vector<std::int64_t> bin_edges;  // size = counts.size() + 1, bin i is [edge i, edge i+1)
  std::vector<std::int64_t> counts;
  std::int64_t n_total = 0;
};

/// Integer-binned histogram starting at the bin containing min(counts).
/// Throws DomainError on empty input or bin_width < 1.
HistogramData build_histogram(std::span<const std::int64_t> counts, std::int64_t bin_width = 1);

enum class FidelityDefinition : std::uint8_t {
  ClassProduct,          // F^2 = F_dark * F_bright
  PriorWeightedSquared,  // F = p_dark F_dark + (1 - p_dark) F_bright, F^2 = F * F
};

struct ThresholdFidelity {
  double f_assign_dark = 0.0;    // P(count <= threshold | dark)
  double f_assign_bright = 0.0;  // P(count > threshold | bright)
  double f_squared = 0.0;
};

ThresholdFidelity threshold_fidelity(double lambda_dark, double lambda_bright, double prior_dark,
                                     std::int64_t threshold,
                                     FidelityDefinition definition = FidelityDefinition::ClassProduct);

enum class ThresholdObjective : std::uint8_t { Balanced, OneSidedDark, OneSidedBright };

/// Exhaustive search over [0, lambda_bright + 10 sqrt(lambda_bright)].
/// Balanced maximizes f_squared. One-sided objectives maximize the purity of
/// the selected class among counts assigned to it, subject to retaining at
/// least min_acceptance of that class; throws ConstraintError if no
/// threshold satisfies it. Ties resolve to the smallest threshold.
std::int64_t optimal_threshold(double lambda_dark, double lambda_bright, double prior_dark,
                               ThresholdObjective objective, double min_acceptance = 0.5,
                               FidelityDefinition definition = FidelityDefinition::ClassProduct);

inline bool is_high(std::int64_t count, std::int64_t threshold) { return count > threshold; }

inline NuclearState classify_nuclear(std::int64_t count, std::int64_t threshold) {
  return is_high(count, threshold) ? NuclearState::MOther : NuclearState::MPlus1;
}

inline photophysics::ChargeState classify_charge(std::int64_t count, std::int64_t threshold) {
  return is_high(count, threshold) ? photophysics::ChargeState::NvMinus
                                   : photophysics::ChargeState::NvZero;
}

struct PhotonCalibration {
  double mean_photons_dark = 0.0;
  double mean_photons_bright = 0.0;
  std::int64_t threshold = 0;  // balanced optimum at the returned means
  double f_squared = 0.0;
  double per_repeat_dark = 0.0;
  double per_repeat_bright = 0.0;
};

/// Finds the overall photon scale (bright = ratio * dark) at which the
/// balanced-optimum F^2 equals target, by bisection in log-scale on
/// [1e-6, 1e7] photons. Throws CalibrationError when the target is not
/// reachable inside that range.
PhotonCalibration calibrate_photon_rates(double target_f_squared, int n_repeats, double ratio,
                                         double prior_dark = 0.5,
                                         FidelityDefinition definition = FidelityDefinition::ClassProduct);

}  // namespace tbi::readout
