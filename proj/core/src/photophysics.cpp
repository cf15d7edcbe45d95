#include "tbi/photophysics.hpp"

#include "tbi/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace tbi::photophysics {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ChargeState other(ChargeState s) {
  return s == ChargeState::NvMinus ? ChargeState::NvZero : ChargeState::NvMinus;
}

double draw_exponential(double rate, Rng& rng) {
  if (rate <= 0.0) return kInf;
  return std::exponential_distribution<double>(rate)(rng);
}

std::int64_t draw_poisson(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  return std::poisson_distribution<std::int64_t>(mean)(rng);
}

void require_rate(double v, const char* name) {
  if (!(std::isfinite(v) && v >= 0.0))
    throw ValidationError(std::string("photophysics: ") + name + " must be finite and >= 0");
}

}  // namespace

std::string_view to_string(ChargeState s) { return s == ChargeState::NvMinus ? "NV-" : "NV0"; }
std::string_view to_string(Illumination l) { return l == Illumination::Green ? "green" : "orange"; }

void IlluminationSetting::validate() const {
  if (!(std::isfinite(power) && power > 0.0)) throw ValidationError("illumination power must be > 0");
}

void PhotophysicsConfig::validate() const {
  require_rate(green.ionization_coeff, "green.ionization_coeff");
  require_rate(green.recombination_coeff, "green.recombination_coeff");
  require_rate(orange.ionization_coeff, "orange.ionization_coeff");
  require_rate(orange.recombination_coeff, "orange.recombination_coeff");
  require_rate(bright_rate, "bright_rate");
  require_rate(dark_rate, "dark_rate");
  if (!(bright_rate > dark_rate)) throw ValidationError("photophysics: bright_rate must exceed dark_rate");
  if (!(std::isfinite(reference_power) && reference_power > 0.0))
    throw ValidationError("photophysics: reference_power must be > 0");
}

PhotophysicsConfig PhotophysicsConfig::defaults() {
  PhotophysicsConfig c;
  const auto orange = IlluminationSetting::orange_default();
  const auto green = IlluminationSetting::green_default();
  const double p_o2 = orange.power * orange.power;
  const double p_g2 = green.power * green.power;
  c.orange.ionization_coeff = (1.0 / 0.6) / p_o2;
  c.orange.recombination_coeff = 0.2 * c.orange.ionization_coeff;
  c.green.ionization_coeff = 3.0e3 / p_g2;
  c.green.recombination_coeff = 7.0e3 / p_g2;
  c.reference_power = orange.power;
  return c;
}

double ChargeRates::steady_state_nv_minus() const {
  const double total = ionization + recombination;
  return total > 0.0 ? recombination / total : 1.0;
}

ChargeRates charge_rates(const PhotophysicsConfig& config, const IlluminationSetting& setting) {
  config.validate();
  setting.validate();
  const auto& k = config.coefficients(setting.label);
  const double p2 = setting.power * setting.power;
  return {k.ionization_coeff * p2, k.recombination_coeff * p2};
}

PhotonRates photon_rates(const PhotophysicsConfig& config, const IlluminationSetting& setting) {
  const double scale = setting.power / config.reference_power;
  return {config.bright_rate * scale, config.dark_rate * scale};
}

ChargeState sample_steady_state(const ChargeRates& rates, Rng& rng) {
  return rng.bernoulli(rates.steady_state_nv_minus()) ? ChargeState::NvMinus : ChargeState::NvZero;
}

ChargeState ChargeTrajectory::state_at(double t) const {
  auto it = std::upper_bound(segments.begin(), segments.end(), t,
                             [](double v, const ChargeSegment& s) { return v < s.start; });
  if (it == segments.begin()) return segments.front().state;
  return std::prev(it)->state;
}

double ChargeTrajectory::occupancy(ChargeState s) const {
  if (duration <= 0.0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < segments.size(); ++i)
    if (segments[i].state == s) total += segment_end(i) - segments[i].start;
  return total / duration;
}

std::vector<double> ChargeTrajectory::dwell_times(ChargeState s) const {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < segments.size(); ++i)
    if (segments[i].state == s) out.push_back(segments[i + 1].start - segments[i].start);
  return out;
}

ChargeTrajectory simulate_charge_trajectory(const PhotophysicsConfig& config,
                                            const IlluminationSetting& setting, double duration,
                                            Rng& rng, std::optional<ChargeState> initial) {
  if (!(duration > 0.0)) throw DomainError("simulate_charge_trajectory: duration must be > 0");
  const ChargeRates rates = charge_rates(config, setting);
  ChargeTrajectory traj;
  traj.duration = duration;
  ChargeState state = initial ? *initial : sample_steady_state(rates, rng);
  double t = 0.0;
  traj.segments.push_back({0.0, state});
  for (;;) {
    t += draw_exponential(rates.exit_rate(state), rng);
    if (!(t < duration)) break;
    state = other(state);
    traj.segments.push_back({t, state});
  }
  return traj;
}

FluorescenceTrace render_trace(const ChargeTrajectory& trajectory, const PhotophysicsConfig& config,
                               const IlluminationSetting& setting, double bin_width, Rng& rng) {
  if (!(bin_width > 0.0)) throw DomainError("render_trace: bin_width must be > 0");
  const PhotonRates rates = photon_rates(config, setting);
  const auto n_bins = static_cast<std::size_t>(std::floor(trajectory.duration / bin_width + 1e-9));
  FluorescenceTrace trace;
  trace.bin_width = bin_width;
  trace.counts.resize(n_bins);
  trace.true_states.resize(n_bins);

  std::size_t seg = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    const double lo = static_cast<double>(b) * bin_width;
    const double hi = lo + bin_width;
    while (seg + 1 < trajectory.segments.size() && trajectory.segments[seg + 1].start <= lo) ++seg;
    double mean = 0.0;
    double time_minus = 0.0;
    for (std::size_t s = seg; s < trajectory.segments.size(); ++s) {
      const double a = std::max(lo, trajectory.segments[s].start);
      const double e = std::min(hi, trajectory.segment_end(s));
      if (a >= hi) break;
      if (e <= a) continue;
      const ChargeState st = trajectory.segments[s].state;
      mean += rates.of(st) * (e - a);
      if (st == ChargeState::NvMinus) time_minus += e - a;
    }
    trace.counts[b] = draw_poisson(mean, rng);
    trace.true_states[b] = time_minus >= 0.5 * bin_width ? ChargeState::NvMinus : ChargeState::NvZero;
  }
  return trace;
}

ChargeMeasurement charge_measurement(const PhotophysicsConfig& config,
                                     const IlluminationSetting& setting, double pulse_duration,
                                     Rng& rng, ChargeState initial) {
  if (!(pulse_duration > 0.0)) throw DomainError("charge_measurement: pulse_duration must be > 0");
  const ChargeRates rates = charge_rates(config, setting);
  const PhotonRates photons = photon_rates(config, setting);
  // Walk the switching events directly; no trajectory allocation per shot.
  ChargeState state = initial;
  double t = 0.0;
  double mean = 0.0;
  for (;;) {
    const double dwell = draw_exponential(rates.exit_rate(state), rng);
    const double end = std::min(pulse_duration, t + dwell);
    mean += photons.of(state) * (end - t);
    if (!(t + dwell < pulse_duration)) break;
    t += dwell;
    state = other(state);
  }
  return {draw_poisson(mean, rng), state};
}

}  // namespace tbi::photophysics
