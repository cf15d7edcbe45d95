#pragma once

// NV charge-state blinking as a two-state continuous-time Markov chain with
// Poissonian photon emission.
//
// NV- ionizes to NV0 by a two-photon process and NV0 recombines to NV-; both
// rates scale with the square of the illumination power. Detected photon
// rates scale linearly with power. Green light is treated through its effect
// only (charge steady state); its own fluorescence is never rendered.

#include "tbi/rng.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace tbi::photophysics {

enum class ChargeState : std::uint8_t { NvMinus, NvZero };

enum class Illumination : std::uint8_t { Green, Orange };

std::string_view to_string(ChargeState s);
std::string_view to_string(Illumination l);

struct IlluminationSetting {
  Illumination label = Illumination::Orange;
  double power = 0.4e-6;  // W
  double wavelength_nm = 600.0;

  void validate() const;

  static IlluminationSetting orange_default() { return {Illumination::Orange, 0.4e-6, 600.0}; }
  static IlluminationSetting green_default() { return {Illumination::Green, 100e-6, 532.0}; }
};

struct ChargeCoefficients {
  double ionization_coeff = 0.0;     // 1/(s W^2)
  double recombination_coeff = 0.0;  // 1/(s W^2)
};

struct PhotophysicsConfig {
  ChargeCoefficients green;
  ChargeCoefficients orange;
  double bright_rate = 2500.0;      // detected photons/s from NV- at reference_power
  double dark_rate = 250.0;         // detected photons/s from NV0 (incl. background) at reference_power
  double reference_power = 0.4e-6;  // W

  void validate() const;
  const ChargeCoefficients& coefficients(Illumination label) const {
    return label == Illumination::Green ? green : orange;
  }

  /// Orange: NV- lifetime 600 ms at 0.4 uW, recombination 5x slower than
  /// ionization. Green: 70 % NV- in steady state.
  static PhotophysicsConfig defaults();
};

struct ChargeRates {
  double ionization = 0.0;     // NV- -> NV0, 1/s
  double recombination = 0.0;  // NV0 -> NV-, 1/s

  /// Long-time NV- occupancy; 1 when both rates vanish.
  double steady_state_nv_minus() const;
  double exit_rate(ChargeState s) const { return s == ChargeState::NvMinus ? ionization : recombination; }
};

ChargeRates charge_rates(const PhotophysicsConfig& config, const IlluminationSetting& setting);

struct PhotonRates {
  double nv_minus = 0.0;
  double nv_zero = 0.0;
  double of(ChargeState s) const { return s == ChargeState::NvMinus ? nv_minus : nv_zero; }
};

PhotonRates photon_rates(const PhotophysicsConfig& config, const IlluminationSetting& setting);

ChargeState sample_steady_state(const ChargeRates& rates, Rng& rng);

struct ChargeSegment {
  double start = 0.0;  // s, switch time into `state`
  ChargeState state = ChargeState::NvMinus;
};

struct ChargeTrajectory {
  double duration = 0.0;
  std::vector<ChargeSegment> segments;  // segments[0].start == 0

  ChargeState state_at(double t) const;
  ChargeState final_state() const { return segments.back().state; }
  double segment_end(std::size_t i) const {
    return i + 1 < segments.size() ? segments[i + 1].start : duration;
  }
  /// Fraction of [0, duration] spent in s.
  double occupancy(ChargeState s) const;
  /// Durations of completed dwells in s; the first and last segments are
  /// censored by the observation window and skipped.
  std::vector<double> dwell_times(ChargeState s) const;
};

/// Exact-event simulation with exponential waiting times. The initial state
/// is drawn from the steady state of the given illumination unless provided.
ChargeTrajectory simulate_charge_trajectory(const PhotophysicsConfig& config,
                                            const IlluminationSetting& setting, double duration,
                                            Rng& rng,
                                            std::optional<ChargeState> initial = std::nullopt);

struct FluorescenceTrace {
  double bin_width = 0.0;
  std::vector<std::int64_t> counts;
  std::vector<ChargeState> true_states;  // state occupying most of each bin; empty if unknown
};

/// Poisson counts per bin with mean equal to the emission rate integrated
/// piecewise over the bin.
FluorescenceTrace render_trace(const ChargeTrajectory& trajectory, const PhotophysicsConfig& config,
                               const IlluminationSetting& setting, double bin_width, Rng& rng);

struct ChargeMeasurement {
  std::int64_t photon_count = 0;
  ChargeState final_state = ChargeState::NvMinus;
};

ChargeMeasurement charge_measurement(const PhotophysicsConfig& config,
                                     const IlluminationSetting& setting, double pulse_duration,
                                     Rng& rng, ChargeState initial);

}  // namespace tbi::photophysics
