#pragma once

// Fits and trace analysis: cosine fits to Rabi scans, Poisson-mixture EM on
// photon-count histograms, dwell-time extraction from blinking traces.

#include "tbi/dynamics.hpp"
#include "tbi/photophysics.hpp"
#include "tbi/readout.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <vector>

namespace tbi::analysis {

struct RabiPoint {
  double tau = 0.0;
  double q = 0.0;
  double std_error = 0.0;
};

/// q(tau) = offset + amplitude * exp(-decay tau) * cos(omega tau + phase),
/// amplitude >= 0, phase in (-pi, pi].
struct CosineFit {
  double offset = 0.0;
  double amplitude = 0.0;
  double omega = 0.0;
  double phase = 0.0;
  double decay = 0.0;
  bool decay_free = false;
  /// Parameter order: offset, amplitude, omega, phase[, decay].
  Eigen::MatrixXd covariance;
  double residual_norm = 0.0;  // sqrt(sum of squared weighted residuals)
  int iterations = 0;

  double operator()(double tau) const;
  double sigma(int index) const;
  static CosineFit ideal(double omega);
};

struct CosineFitOptions {
  bool fit_decay = false;
  int max_iterations = 400;
};

/// Weighted least squares (Levenberg-Marquardt). Omega is seeded from the
/// discrete periodogram peak, then offset/amplitude/phase from the linear
/// problem at that frequency. Covariance is (J^T W J)^-1 at the optimum.
/// Non-positive stderr values are replaced by the smallest positive one (or
/// 1 when none is positive).
/// Throws DomainError for fewer than 6 points or a span shorter than half
/// a period of the seeded frequency; FitError when the optimizer fails.
CosineFit fit_cosine(std::span<const RabiPoint> points, const CosineFitOptions& options = {});

/// B(t) = q(2t) - q(t)^2 on the fitted curve. The fitted curve is a model,
/// so values are not clamped to [0, 1].
std::vector<dynamics::BellPoint> bell_from_fit(const CosineFit& fit, std::span<const double> t_grid);

/// Minimum of the fit-derived B over (0, t_max].
dynamics::BellMinimum minimize_bell_from_fit(const CosineFit& fit, double t_max,
                                             std::size_t grid_points = 4000);

struct PoissonMixtureFit {
  double lambda_low = 0.0;
  double lambda_high = 0.0;
  double weight_low = 0.0;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool degenerate = false;
  std::vector<double> log_likelihood_trace;  // one entry per EM iteration

  double weight_high() const { return 1.0 - weight_low; }
};

struct MixtureOptions {
  int max_iterations = 20000;
  double tolerance = 1e-9;  // stop when the log-likelihood gain drops below this
  int restarts = 0;         // extra randomly initialized runs; best likelihood wins
  std::uint64_t seed = 0;
  /// A two-component fit must beat the single Poisson by this much in
  /// 2 * delta log-likelihood, otherwise the data are flagged degenerate.
  double min_lr_statistic = 16.0;
};

/// EM for a two-component Poisson mixture. Deterministic start: split at
/// the median. Degenerate data return lambda_low = lambda_high = sample mean,
/// weight_low = 1 and degenerate = true.
/// Throws InsufficientDataError for fewer than 100 samples.
PoissonMixtureFit fit_poisson_mixture(std::span<const std::int64_t> counts, const MixtureOptions& options = {});
/// Histogram input; each bin contributes its lower edge (exact for width 1).
PoissonMixtureFit fit_poisson_mixture(const readout::HistogramData& histogram,
                                      const MixtureOptions& options = {});

struct DwellTimes {
  std::vector<double> low;   // NV0 / dark dwells, s
  std::vector<double> high;  // NV- / bright dwells, s
  bool degenerate = false;   // no switch detected
};

/// Per-bin classification (count > threshold is high), run-length
/// segmentation, then debounce: a run shorter than `debounce` bins is
/// absorbed into the preceding run (the following one for a short first
/// run). Edge runs are reported as dwells.
DwellTimes extract_dwell_times(const photophysics::FluorescenceTrace& trace, std::int64_t threshold,
                               int debounce = 3);

}  // namespace tbi::analysis
