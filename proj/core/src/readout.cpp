#include "tbi/readout.hpp"

#include "tbi/error.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace tbi::readout {

namespace {

// P(X <= k) for X ~ Poisson(lambda).
double poisson_cdf(std::int64_t k, double lambda) {
  if (k < 0) return 0.0;
  if (lambda <= 0.0) return 1.0;
  return boost::math::gamma_q(static_cast<double>(k) + 1.0, lambda);
}

// P(X > k), computed directly so the upper tail keeps full precision.
double poisson_sf(std::int64_t k, double lambda) {
  if (k < 0) return 1.0;
  if (lambda <= 0.0) return 0.0;
  return boost::math::gamma_p(static_cast<double>(k) + 1.0, lambda);
}

void check_means(double lambda_dark, double lambda_bright) {
  if (!(std::isfinite(lambda_dark) && lambda_dark >= 0.0))
    throw DomainError("lambda_dark must be finite and >= 0");
  if (!(std::isfinite(lambda_bright) && lambda_bright >= lambda_dark))
    throw DomainError("lambda_bright must be finite and >= lambda_dark");
}

std::int64_t search_upper(double lambda_bright) {
  return static_cast<std::int64_t>(std::ceil(lambda_bright + 10.0 * std::sqrt(lambda_bright)));
}

}  // namespace

std::string_view to_string(NuclearState s) { return s == NuclearState::MPlus1 ? "m+1" : "m0/-1"; }

void ReadoutConfig::validate() const {
  if (n_repeats < 1) throw ValidationError("readout: n_repeats must be >= 1");
  if (!(std::isfinite(mean_photons_dark) && mean_photons_dark >= 0.0))
    throw ValidationError("readout: mean_photons_dark must be finite and >= 0");
  if (!(std::isfinite(mean_photons_bright) && mean_photons_bright > mean_photons_dark))
    throw ValidationError("readout: mean_photons_bright must exceed mean_photons_dark");
  if (!(flip_prob_per_repeat >= 0.0 && flip_prob_per_repeat <= 1.0))
    throw ValidationError("readout: flip_prob_per_repeat must lie in [0, 1]");
  if (threshold < 0) throw ValidationError("readout: threshold must be >= 0");
}

ReadoutOutcome simulate_readout(NuclearState true_state, const ReadoutConfig& config, Rng& rng) {
  const double per_dark = config.mean_photons_dark / config.n_repeats;
  const double per_bright = config.mean_photons_bright / config.n_repeats;
  const double p = config.flip_prob_per_repeat;
  NuclearState state = true_state;
  double mean = 0.0;
  std::int64_t remaining = config.n_repeats;
  auto per_repeat = [&](NuclearState s) { return s == NuclearState::MPlus1 ? per_dark : per_bright; };

  if (p <= 0.0) {
    mean = per_repeat(state) * static_cast<double>(remaining);
  } else {
    std::geometric_distribution<std::int64_t> until_flip(std::min(p, 1.0 - 1e-16));
    while (remaining > 0) {
      const std::int64_t stay = p >= 1.0 ? 0 : until_flip(rng);
      if (stay >= remaining) {
        mean += per_repeat(state) * static_cast<double>(remaining);
        break;
      }
      mean += per_repeat(state) * static_cast<double>(stay);
      remaining -= stay;
      state = flipped(state);
      // The repeat in which the flip happened already reads the new state.
      mean += per_repeat(state);
      remaining -= 1;
    }
  }
  const std::int64_t count = mean > 0.0 ? std::poisson_distribution<std::int64_t>(mean)(rng) : 0;
  return {count, state};
}

HistogramData build_histogram(std::span<const std::int64_t> counts, std::int64_t bin_width) {
  if (counts.empty()) throw DomainError("build_histogram: empty input");
  if (bin_width < 1) throw DomainError("build_histogram: bin_width must be >= 1");
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  auto floor_div = [&](std::int64_t v) {
    return v >= 0 ? v / bin_width : -((-v + bin_width - 1) / bin_width);
  };
  const std::int64_t first = floor_div(*mn);
  const std::int64_t last = floor_div(*mx);
  HistogramData h;
  const auto n_bins = static_cast<std::size_t>(last - first + 1);
  h.counts.assign(n_bins, 0);
  h.bin_edges.resize(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i)
    h.bin_edges[i] = (first + static_cast<std::int64_t>(i)) * bin_width;
  for (auto c : counts) ++h.counts[static_cast<std::size_t>(floor_div(c) - first)];
  h.n_total = static_cast<std::int64_t>(counts.size());
  return h;
}

ThresholdFidelity threshold_fidelity(double lambda_dark, double lambda_bright, double prior_dark,
                                     std::int64_t threshold, FidelityDefinition definition) {
  check_means(lambda_dark, lambda_bright);
  if (!(prior_dark >= 0.0 && prior_dark <= 1.0)) throw DomainError("prior_dark must lie in [0, 1]");
  ThresholdFidelity f;
  f.f_assign_dark = poisson_cdf(threshold, lambda_dark);
  f.f_assign_bright = poisson_sf(threshold, lambda_bright);
  if (definition == FidelityDefinition::ClassProduct) {
    f.f_squared = f.f_assign_dark * f.f_assign_bright;
  } else {
    const double one = prior_dark * f.f_assign_dark + (1.0 - prior_dark) * f.f_assign_bright;
    f.f_squared = one * one;
  }
  return f;
}

std::int64_t optimal_threshold(double lambda_dark, double lambda_bright, double prior_dark,
                               ThresholdObjective objective, double min_acceptance,
                               FidelityDefinition definition) {
  check_means(lambda_dark, lambda_bright);
  if (!(min_acceptance >= 0.0 && min_acceptance <= 1.0))
    throw DomainError("min_acceptance must lie in [0, 1]");
  const std::int64_t upper = search_upper(lambda_bright);
  std::int64_t best = -1;
  double best_score = -1.0;
  for (std::int64_t th = 0; th <= upper; ++th) {
    const auto f = threshold_fidelity(lambda_dark, lambda_bright, prior_dark, th, definition);
    double score = 0.0;
    switch (objective) {
      case ThresholdObjective::Balanced:
        score = f.f_squared;
        break;
      case ThresholdObjective::OneSidedBright: {
        if (f.f_assign_bright < min_acceptance) continue;
        const double hit = (1.0 - prior_dark) * f.f_assign_bright;
        const double miss = prior_dark * (1.0 - f.f_assign_dark);
        score = hit + miss > 0.0 ? hit / (hit + miss) : 0.0;
        break;
      }
      case ThresholdObjective::OneSidedDark: {
        if (f.f_assign_dark < min_acceptance) continue;
        const double hit = prior_dark * f.f_assign_dark;
        const double miss = (1.0 - prior_dark) * (1.0 - f.f_assign_bright);
        score = hit + miss > 0.0 ? hit / (hit + miss) : 0.0;
        break;
      }
    }
    if (score > best_score) {
      best_score = score;
      best = th;
    }
  }
  if (best < 0) {
    std::ostringstream os;
    os << "optimal_threshold: no threshold in [0, " << upper << "] retains " << min_acceptance
       << " of the selected class";
    throw ConstraintError(os.str());
  }
  return best;
}

PhotonCalibration calibrate_photon_rates(double target_f_squared, int n_repeats, double ratio,
                                         double prior_dark, FidelityDefinition definition) {
  if (!(target_f_squared > 0.0 && target_f_squared < 1.0))
    throw DomainError("calibrate_photon_rates: target must lie in (0, 1)");
  if (!(ratio > 1.0) || !std::isfinite(ratio)) throw DomainError("calibrate_photon_rates: ratio must be > 1");
  if (n_repeats < 1) throw DomainError("calibrate_photon_rates: n_repeats must be >= 1");

  auto evaluate = [&](double scale, std::int64_t* th_out) {
    const std::int64_t th =
        optimal_threshold(scale, ratio * scale, prior_dark, ThresholdObjective::Balanced, 0.5, definition);
    if (th_out) *th_out = th;
    return threshold_fidelity(scale, ratio * scale, prior_dark, th, definition).f_squared;
  };

  constexpr double kMinScale = 1e-6;
  constexpr double kMaxScale = 1e4;
  double lo = std::log(kMinScale), hi = std::log(kMaxScale);
  const double f_lo = evaluate(kMinScale, nullptr);
  const double f_hi = evaluate(kMaxScale, nullptr);
  if (!(f_lo < target_f_squared && target_f_squared <= f_hi)) {
    std::ostringstream os;
    os << "calibrate_photon_rates: target F^2 = " << target_f_squared << " unreachable for ratio " << ratio
       << " (F^2 spans [" << f_lo << ", " << f_hi << "] over dark means [" << kMinScale << ", " << kMaxScale
       << "])";
    throw CalibrationError(os.str());
  }
  for (int i = 0; i < 200 && hi - lo > 1e-13; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (evaluate(std::exp(mid), nullptr) < target_f_squared)
      lo = mid;
    else
      hi = mid;
  }
  PhotonCalibration c;
  c.mean_photons_dark = std::exp(hi);
  c.mean_photons_bright = ratio * c.mean_photons_dark;
  c.f_squared = evaluate(c.mean_photons_dark, &c.threshold);
  c.per_repeat_dark = c.mean_photons_dark / n_repeats;
  c.per_repeat_bright = c.mean_photons_bright / n_repeats;
  if (std::abs(c.f_squared - target_f_squared) > 1e-3) {
    std::ostringstream os;
    os << "calibrate_photon_rates: converged to F^2 = " << c.f_squared << ", target " << target_f_squared;
    throw CalibrationError(os.str());
  }
  return c;
}

}  // namespace tbi::readout
