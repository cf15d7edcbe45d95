#pragma once

// Two-level dynamics of the driven nuclear spin and the temporal Bell
// functional built from its two-time survival probabilities.
//
// Noise model. The spin is driven resonantly, H = (omega/2) sigma_x, and
// subject to two Markovian channels:
//   * dephasing along the drive axis, L = sqrt(gamma_phi / 2) sigma_x, which
//     damps the Bloch components orthogonal to the drive (y, z) at gamma_phi;
//   * isotropic relaxation toward the infinite-temperature state 1/2, which
//     damps every Bloch component at gamma_1 / 2.
// Both channels commute with the drive, so the survival probability of |1>
// is exactly 1/2 (1 + exp(-gamma_eff t) cos(omega t)) with
// gamma_eff = gamma_phi + gamma_1 / 2, and the maximally mixed state is the
// unique fixed point.

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

namespace tbi::dynamics {

struct RabiParams {
  double omega = 1.0;      // rad/s
  double gamma_phi = 0.0;  // 1/s
  double gamma_1 = 0.0;    // 1/s

  void validate() const;
  double gamma_eff() const { return gamma_phi + 0.5 * gamma_1; }
};

/// 2x2 density matrix. Construction validates trace, hermiticity and
/// positivity at 1e-12.
class DensityMatrix {
 public:
  static constexpr double kTolerance = 1e-12;

  explicit DensityMatrix(const Eigen::Matrix2cd& rho);

  /// |1><1|, the state whose survival is Q_11.
  static DensityMatrix excited();
  static DensityMatrix ground();
  static DensityMatrix maximally_mixed();
  static DensityMatrix from_bloch(const Eigen::Vector3d& r);

  const Eigen::Matrix2cd& matrix() const { return rho_; }
  Eigen::Vector3d bloch() const;
  /// <1|rho|1>
  double population_one() const { return rho_(0, 0).real(); }

 private:
  Eigen::Matrix2cd rho_;
};

struct ConditionalProbability {
  double value = 0.0;
  double t_start = 0.0;
  double t_end = 0.0;
};

/// Q_11(0, t). Throws DomainError for t < 0.
double survival_probability(const RabiParams& params, double t);

/// Fixed-step RK4 on the Bloch vector; the final step is shortened to land on t.
/// Global error is O(dt^4). Throws DomainError on dt <= 0 or t < 0.
DensityMatrix evolve_master_equation(const DensityMatrix& rho, const RabiParams& params, double t,
                                     double dt);

/// q_2t - q_t^2. Negative values violate the classical bound.
double bell_functional(double q_t, double q_2t);

struct BellPoint {
  double t = 0.0;
  double q_t = 0.0;
  double q_2t = 0.0;
  double b = 0.0;
};

/// Throws DomainError(GridEmpty) on an empty grid, DomainError on an unsorted
/// or negative grid.
std::vector<BellPoint> bell_curve(const RabiParams& params, std::span<const double> t_grid);

/// Closed-form B(t) evaluated without catastrophic cancellation at small t.
/// Agrees with bell_functional(survival(t), survival(2t)) to rounding.
double bell_value(const RabiParams& params, double t);

struct BellMinimum {
  double t = 0.0;
  double b = 0.0;
};

/// Minimum of B over t in (0, t_max]: dense grid (log-spaced near 0, linear
/// elsewhere) followed by Brent refinement.
BellMinimum minimize_bell(const RabiParams& params, double t_max, std::size_t grid_points = 4000);

struct CriticalNoise {
  double gamma_star = 0.0;   // midpoint of the final bracket
  double bracket_lo = 0.0;   // largest gamma found to violate
  double bracket_hi = 0.0;   // smallest gamma found not to violate
  double minimizer_t = 0.0;  // argmin_t B at bracket_lo
  double min_b_lo = 0.0;
  double min_b_hi = 0.0;
  int iterations = 0;
};

/// Bisection on gamma_eff for the boundary where min_t B(t; gamma) crosses 0.
/// tol is the final bracket width in rate units. The violation test uses
/// B(t)/t^2, which has the sign of B but stays well conditioned as the
/// violating window shrinks toward t = 0 near the boundary.
/// Throws SearchError when no sign change is bracketed or the sampled
/// min_t B is not monotone in gamma over the bracket.
CriticalNoise critical_noise(double omega, double tol);

/// Prepares |1> afresh at each start time, evolves by delta with the
/// integrator and returns the largest pairwise spread of Q(t_s, t_s + delta).
double stationarity_check(const RabiParams& params, double delta, std::span<const double> t_starts,
                          double dt = 0.0);

}  // namespace tbi::dynamics
