#include "tbi/dynamics.hpp"

#include "tbi/error.hpp"
#include "tbi/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>

namespace tbi::dynamics {

namespace {

using cd = std::complex<double>;

// Pauli decomposition rho = (1 + r.sigma)/2 with |1> = (1, 0)^T.
Eigen::Matrix2cd bloch_to_matrix(const Eigen::Vector3d& r) {
  Eigen::Matrix2cd m;
  m(0, 0) = cd(0.5 * (1.0 + r.z()), 0.0);
  m(1, 1) = cd(0.5 * (1.0 - r.z()), 0.0);
  m(0, 1) = cd(0.5 * r.x(), -0.5 * r.y());
  m(1, 0) = cd(0.5 * r.x(), 0.5 * r.y());
  return m;
}

Eigen::Vector3d bloch_rhs(const RabiParams& p, const Eigen::Vector3d& r) {
  const double relax = 0.5 * p.gamma_1;
  return {-relax * r.x(),
          -p.omega * r.z() - (p.gamma_phi + relax) * r.y(),
          p.omega * r.y() - (p.gamma_phi + relax) * r.z()};
}

Eigen::Vector3d integrate_bloch(Eigen::Vector3d r, const RabiParams& p, double t0, double t1, double dt) {
  double t = t0;
  while (t < t1) {
    const double h = std::min(dt, t1 - t);
    const Eigen::Vector3d k1 = bloch_rhs(p, r);
    const Eigen::Vector3d k2 = bloch_rhs(p, r + 0.5 * h * k1);
    const Eigen::Vector3d k3 = bloch_rhs(p, r + 0.5 * h * k2);
    const Eigen::Vector3d k4 = bloch_rhs(p, r + h * k3);
    r += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    // Guard against t + h rounding to t when the remainder is tiny.
    const double next = t + h;
    if (next <= t) break;
    t = next;
  }
  return r;
}

void check_probability(double q, const char* name) {
  if (!(q >= 0.0 && q <= 1.0)) {
    std::ostringstream os;
    os << name << " = " << q << " is not a probability";
    throw DomainError(os.str());
  }
}

// Same sign as B for t > 0.
double scaled_bell(const RabiParams& p, double t) {
  return bell_value(p, t) / (t * t);
}

bool violates(double omega, double gamma, double t_floor) {
  const RabiParams p{omega, gamma, 0.0};
  std::vector<double> grid = numeric::logspace(t_floor, 1.0 / omega, 400);
  const auto lin = numeric::open_linspace(1.0 / omega, 4.0 * std::numbers::pi / omega, 2000);
  grid.insert(grid.end(), lin.begin(), lin.end());
  const auto m = numeric::minimize_sampled([&](double t) { return scaled_bell(p, t); }, grid);
  return m.value < 0.0;
}

}  // namespace

void RabiParams::validate() const {
  if (!(std::isfinite(omega) && omega > 0.0)) throw ValidationError("omega must be finite and > 0");
  if (!(std::isfinite(gamma_phi) && gamma_phi >= 0.0))
    throw ValidationError("gamma_phi must be finite and >= 0");
  if (!(std::isfinite(gamma_1) && gamma_1 >= 0.0))
    throw ValidationError("gamma_1 must be finite and >= 0");
}

DensityMatrix::DensityMatrix(const Eigen::Matrix2cd& rho) : rho_(rho) {
  if (!rho.allFinite()) throw ValidationError("density matrix has non-finite entries");
  const cd tr = rho.trace();
  if (std::abs(tr.real() - 1.0) > kTolerance || std::abs(tr.imag()) > kTolerance)
    throw ValidationError("density matrix trace differs from 1");
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > kTolerance)
    throw ValidationError("density matrix is not Hermitian");
  // Eigenvalues of a unit-trace Hermitian 2x2 are (1 +- |r|)/2.
  if (bloch().norm() > 1.0 + 2.0 * kTolerance)
    throw ValidationError("density matrix is not positive semidefinite");
}

DensityMatrix DensityMatrix::excited() { return from_bloch({0.0, 0.0, 1.0}); }
DensityMatrix DensityMatrix::ground() { return from_bloch({0.0, 0.0, -1.0}); }
DensityMatrix DensityMatrix::maximally_mixed() { return from_bloch(Eigen::Vector3d::Zero()); }
DensityMatrix DensityMatrix::from_bloch(const Eigen::Vector3d& r) { return DensityMatrix(bloch_to_matrix(r)); }

Eigen::Vector3d DensityMatrix::bloch() const {
  return {2.0 * rho_(1, 0).real(), 2.0 * rho_(1, 0).imag(), (rho_(0, 0) - rho_(1, 1)).real()};
}

double survival_probability(const RabiParams& params, double t) {
  if (!(t >= 0.0)) throw DomainError("survival_probability: t must be >= 0");
  params.validate();
  const double q = 0.5 * (1.0 + std::exp(-params.gamma_eff() * t) * std::cos(params.omega * t));
  return std::clamp(q, 0.0, 1.0);
}

DensityMatrix evolve_master_equation(const DensityMatrix& rho, const RabiParams& params, double t,
                                     double dt) {
  if (!(t >= 0.0)) throw DomainError("evolve_master_equation: t must be >= 0");
  if (!(dt > 0.0)) throw DomainError("evolve_master_equation: dt must be > 0");
  params.validate();
  const Eigen::Vector3d r = integrate_bloch(rho.bloch(), params, 0.0, t, dt);
  return DensityMatrix::from_bloch(r);
}

double bell_functional(double q_t, double q_2t) {
  check_probability(q_t, "q_t");
  check_probability(q_2t, "q_2t");
  return q_2t - q_t * q_t;
}

std::vector<BellPoint> bell_curve(const RabiParams& params, std::span<const double> t_grid) {
  if (t_grid.empty()) throw DomainError(ErrorCode::GridEmpty, "bell_curve: empty time grid");
  params.validate();
  std::vector<BellPoint> out;
  out.reserve(t_grid.size());
  double prev = 0.0;
  for (double t : t_grid) {
    if (!(t >= 0.0)) throw DomainError("bell_curve: negative time in grid");
    if (t < prev) throw DomainError("bell_curve: time grid is not sorted");
    prev = t;
    const double q1 = survival_probability(params, t);
    const double q2 = survival_probability(params, 2.0 * t);
    out.push_back({t, q1, q2, bell_functional(q1, q2)});
  }
  return out;
}

double bell_value(const RabiParams& params, double t) {
  // With v(t) = 1 - e^{-g t} cos(w t):  B = v(t) - v(2t)/2 - v(t)^2/4, and
  // v(t) - v(2t)/2 = expm1(-a)^2/2 + 2 s^2 (e^{-a} - 2 e^{-2a} c^2),
  // a = g t, s = sin(w t / 2), c = cos(w t / 2). No term cancels at O(t).
  const double a = params.gamma_eff() * t;
  const double half = 0.5 * params.omega * t;
  const double s = std::sin(half), c = std::cos(half);
  const double em1 = std::expm1(-a);
  const double ea = std::exp(-a);
  const double v1 = -em1 + 2.0 * ea * s * s;
  return 0.5 * em1 * em1 + 2.0 * s * s * (ea - 2.0 * ea * ea * c * c) - 0.25 * v1 * v1;
}

BellMinimum minimize_bell(const RabiParams& params, double t_max, std::size_t grid_points) {
  params.validate();
  if (!(t_max > 0.0)) throw DomainError("minimize_bell: t_max must be > 0");
  grid_points = std::max<std::size_t>(grid_points, 16);
  const double t_knee = std::min(t_max, 0.1 / params.omega);
  std::vector<double> grid = numeric::logspace(1e-6 * t_knee, t_knee, grid_points / 4);
  if (t_max > t_knee) {
    const auto lin = numeric::open_linspace(t_knee, t_max, grid_points);
    grid.insert(grid.end(), lin.begin(), lin.end());
  }
  const auto m = numeric::minimize_sampled([&](double t) { return bell_value(params, t); }, grid);
  return {m.x, m.value};
}

CriticalNoise critical_noise(double omega, double tol) {
  if (!(std::isfinite(omega) && omega > 0.0)) throw DomainError("critical_noise: omega must be > 0");
  if (!(std::isfinite(tol) && tol > 0.0)) throw DomainError("critical_noise: tol must be > 0");

  const double t_floor = std::min(1e-6, 1e-3 * tol / omega) / omega;
  double lo = 0.0;
  double hi = 2.0 * omega;
  if (!violates(omega, lo, t_floor))
    throw SearchError("critical_noise: no violation at gamma = 0; cannot bracket");
  int expansions = 0;
  while (violates(omega, hi, t_floor)) {
    lo = hi;
    hi *= 2.0;
    if (++expansions > 60) {
      std::ostringstream os;
      os << "critical_noise: no sign change up to gamma = " << hi << " (omega = " << omega << ")";
      throw SearchError(os.str());
    }
  }

  // Empirical monotonicity of min_t B over the bracket.
  {
    const double t_max = 4.0 * std::numbers::pi / omega;
    double prev_min = -std::numeric_limits<double>::infinity();
    bool seen_clean = false;
    for (int k = 0; k <= 8; ++k) {
      const double g = lo + (hi - lo) * k / 8.0;
      const double m = minimize_bell({omega, g, 0.0}, t_max).b;
      const bool v = violates(omega, g, t_floor);
      if ((seen_clean && v) || m < prev_min - 1e-12) {
        std::ostringstream os;
        os << "critical_noise: min_t B is not monotone in gamma on [" << lo << ", " << hi
           << "] (sample gamma = " << g << ", min B = " << m << ", previous = " << prev_min << ")";
        throw SearchError(os.str());
      }
      seen_clean = seen_clean || !v;
      prev_min = m;
    }
  }

  CriticalNoise out;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (violates(omega, mid, t_floor))
      lo = mid;
    else
      hi = mid;
    ++out.iterations;
  }
  out.bracket_lo = lo;
  out.bracket_hi = hi;
  out.gamma_star = 0.5 * (lo + hi);
  const double t_max = 4.0 * std::numbers::pi / omega;
  const auto m_lo = minimize_bell({omega, lo, 0.0}, t_max);
  out.minimizer_t = m_lo.t;
  out.min_b_lo = m_lo.b;
  out.min_b_hi = minimize_bell({omega, hi, 0.0}, t_max).b;
  return out;
}

double stationarity_check(const RabiParams& params, double delta, std::span<const double> t_starts,
                          double dt) {
  if (t_starts.empty()) throw DomainError("stationarity_check: no start times");
  if (!(delta >= 0.0)) throw DomainError("stationarity_check: delta must be >= 0");
  params.validate();
  if (dt <= 0.0) dt = 1e-3 / params.omega;
  const Eigen::Vector3d prepared = DensityMatrix::excited().bloch();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double ts : t_starts) {
    if (!(ts >= 0.0)) throw DomainError("stationarity_check: negative start time");
    const Eigen::Vector3d r = integrate_bloch(prepared, params, ts, ts + delta, dt);
    const double q = DensityMatrix::from_bloch(r).population_one();
    lo = std::min(lo, q);
    hi = std::max(hi, q);
  }
  return hi - lo;
}

}  // namespace tbi::dynamics
