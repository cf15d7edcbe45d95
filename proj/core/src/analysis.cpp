#include "tbi/analysis.hpp"

#include "tbi/error.hpp"
#include "tbi/numeric.hpp"
#include "tbi/rng.hpp"

#include <unsupported/Eigen/LevenbergMarquardt>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace tbi::analysis {

namespace {

constexpr double kPi = std::numbers::pi;

double wrap_phase(double phi) {
  phi = std::remainder(phi, 2.0 * kPi);
  if (phi <= -kPi) phi += 2.0 * kPi;
  return phi;
}

struct CosineResidual : Eigen::DenseFunctor<double> {
  CosineResidual(const std::vector<RabiPoint>& pts, const std::vector<double>& sig, bool decay)
      : DenseFunctor<double>(decay ? 5 : 4, static_cast<int>(pts.size())), points(pts), sigma(sig),
        with_decay(decay) {}

  int operator()(const InputType& x, ValueType& f) const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double tau = points[i].tau;
      const double env = with_decay ? std::exp(-x[4] * tau) : 1.0;
      const double model = x[0] + x[1] * env * std::cos(x[2] * tau + x[3]);
      f[static_cast<Eigen::Index>(i)] = (model - points[i].q) / sigma[i];
    }
    return 0;
  }

  int df(const InputType& x, JacobianType& j) const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const double tau = points[i].tau;
      const double env = with_decay ? std::exp(-x[4] * tau) : 1.0;
      const double th = x[2] * tau + x[3];
      const double c = std::cos(th), s = std::sin(th);
      const double w = 1.0 / sigma[i];
      j(r, 0) = w;
      j(r, 1) = w * env * c;
      j(r, 2) = -w * x[1] * env * tau * s;
      j(r, 3) = -w * x[1] * env * s;
      if (with_decay) j(r, 4) = -w * tau * x[1] * env * c;
    }
    return 0;
  }

  const std::vector<RabiPoint>& points;
  const std::vector<double>& sigma;
  bool with_decay;
};

double seed_frequency(const std::vector<RabiPoint>& pts, const std::vector<double>& sigma, double span) {
  double min_gap = std::numeric_limits<double>::infinity();
  std::vector<double> taus;
  for (const auto& p : pts) taus.push_back(p.tau);
  std::sort(taus.begin(), taus.end());
  for (std::size_t i = 1; i < taus.size(); ++i)
    if (taus[i] > taus[i - 1]) min_gap = std::min(min_gap, taus[i] - taus[i - 1]);

  double wsum = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double w = 1.0 / (sigma[i] * sigma[i]);
    wsum += w;
    mean += w * pts[i].q;
  }
  mean /= wsum;

  auto power = [&](double omega) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double w = 1.0 / (sigma[i] * sigma[i]);
      re += w * (pts[i].q - mean) * std::cos(omega * pts[i].tau);
      im += w * (pts[i].q - mean) * std::sin(omega * pts[i].tau);
    }
    return re * re + im * im;
  };

  const double w_min = kPi / span;
  const double w_max = std::max(kPi / min_gap, 2.0 * w_min);
  const double step = w_min / 20.0;
  const auto n = static_cast<std::size_t>(std::min(200000.0, std::ceil((w_max - w_min) / step)) + 1);
  double best_w = w_min, best_p = -1.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double w = w_min + (w_max - w_min) * static_cast<double>(k) / static_cast<double>(n - 1);
    const double p = power(w);
    if (p > best_p) {
      best_p = p;
      best_w = w;
    }
  }
  // Polish the peak inside its grid cell.
  const double cell = (w_max - w_min) / static_cast<double>(n - 1);
  std::uintmax_t iters = 100;
  const auto [w_ref, neg_p] = boost::math::tools::brent_find_minima(
      [&](double w) { return -power(w); }, std::max(1e-300, best_w - cell), best_w + cell, 40, iters);
  return -neg_p > best_p ? w_ref : best_w;
}

double log_poisson(double k, double lambda) {
  if (lambda <= 0.0) return k == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return k * std::log(lambda) - lambda - std::lgamma(k + 1.0);
}

double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

struct Compressed {
  std::vector<double> value;
  std::vector<double> weight;
  double n = 0.0;
  double mean = 0.0;
};

Compressed compress(std::span<const std::int64_t> counts) {
  std::map<std::int64_t, double> m;
  for (auto c : counts) {
    if (c < 0) throw DomainError("fit_poisson_mixture: negative count");
    m[c] += 1.0;
  }
  Compressed out;
  for (const auto& [v, w] : m) {
    out.value.push_back(static_cast<double>(v));
    out.weight.push_back(w);
    out.n += w;
    out.mean += w * static_cast<double>(v);
  }
  out.mean /= out.n;
  return out;
}

double mixture_log_likelihood(const Compressed& d, double w, double l_lo, double l_hi) {
  double ll = 0.0;
  for (std::size_t i = 0; i < d.value.size(); ++i) {
    const double a = std::log(w) + log_poisson(d.value[i], l_lo);
    const double b = std::log1p(-w) + log_poisson(d.value[i], l_hi);
    ll += d.weight[i] * log_sum_exp(a, b);
  }
  return ll;
}

PoissonMixtureFit run_em(const Compressed& d, double w, double l_lo, double l_hi, const MixtureOptions& opt) {
  PoissonMixtureFit fit;
  double prev = -std::numeric_limits<double>::infinity();
  for (int it = 0; it < opt.max_iterations; ++it) {
    double s0 = 0.0, s0k = 0.0, s1 = 0.0, s1k = 0.0, ll = 0.0;
    for (std::size_t i = 0; i < d.value.size(); ++i) {
      const double a = std::log(w) + log_poisson(d.value[i], l_lo);
      const double b = std::log1p(-w) + log_poisson(d.value[i], l_hi);
      const double z = log_sum_exp(a, b);
      const double r = std::exp(a - z);
      ll += d.weight[i] * z;
      s0 += d.weight[i] * r;
      s0k += d.weight[i] * r * d.value[i];
      s1 += d.weight[i] * (1.0 - r);
      s1k += d.weight[i] * (1.0 - r) * d.value[i];
    }
    fit.log_likelihood_trace.push_back(ll);
    fit.iterations = it + 1;
    if (ll - prev < opt.tolerance) {
      prev = ll;
      break;
    }
    prev = ll;
    w = std::clamp(s0 / d.n, 1e-300, 1.0 - 1e-16);
    if (s0 > 0.0) l_lo = s0k / s0;
    if (s1 > 0.0) l_hi = s1k / s1;
  }
  fit.weight_low = w;
  fit.lambda_low = l_lo;
  fit.lambda_high = l_hi;
  fit.log_likelihood = prev;
  return fit;
}

}  // namespace

double CosineFit::operator()(double tau) const {
  return offset + amplitude * std::exp(-decay * tau) * std::cos(omega * tau + phase);
}

double CosineFit::sigma(int index) const {
  if (index < 0 || index >= covariance.rows()) return std::numeric_limits<double>::quiet_NaN();
  return std::sqrt(covariance(index, index));
}

CosineFit CosineFit::ideal(double omega) {
  CosineFit f;
  f.offset = 0.5;
  f.amplitude = 0.5;
  f.omega = omega;
  f.covariance = Eigen::MatrixXd::Zero(4, 4);
  return f;
}

CosineFit fit_cosine(std::span<const RabiPoint> points, const CosineFitOptions& options) {
  if (points.size() < 6) throw DomainError(ErrorCode::InsufficientData, "fit_cosine: need at least 6 points");
  std::vector<RabiPoint> pts(points.begin(), points.end());
  double tmin = std::numeric_limits<double>::infinity(), tmax = -tmin;
  double min_pos = std::numeric_limits<double>::infinity();
  for (const auto& p : pts) {
    if (!std::isfinite(p.tau) || !std::isfinite(p.q)) throw DomainError("fit_cosine: non-finite point");
    tmin = std::min(tmin, p.tau);
    tmax = std::max(tmax, p.tau);
    if (p.std_error > 0.0) min_pos = std::min(min_pos, p.std_error);
  }
  const double span = tmax - tmin;
  if (!(span > 0.0)) throw DomainError("fit_cosine: degenerate grid (all tau equal)");
  const double floor_sigma = std::isfinite(min_pos) ? min_pos : 1.0;
  std::vector<double> sigma;
  for (const auto& p : pts) sigma.push_back(p.std_error > 0.0 ? p.std_error : floor_sigma);

  const double omega0 = seed_frequency(pts, sigma, span);
  if (omega0 * span < kPi * (1.0 - 1e-9)) {
    std::ostringstream os;
    os << "fit_cosine: grid spans " << span << " which is less than half a period at omega = " << omega0;
    throw DomainError(os.str());
  }

  // Linear seed for offset, amplitude and phase at omega0.
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd a(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = pts[static_cast<std::size_t>(i)];
    const double w = 1.0 / sigma[static_cast<std::size_t>(i)];
    a(i, 0) = w;
    a(i, 1) = w * std::cos(omega0 * p.tau);
    a(i, 2) = w * std::sin(omega0 * p.tau);
    y(i) = w * p.q;
  }
  const Eigen::Vector3d lin = a.colPivHouseholderQr().solve(y);

  Eigen::VectorXd x(options.fit_decay ? 5 : 4);
  x[0] = lin[0];
  x[1] = std::hypot(lin[1], lin[2]);
  x[2] = omega0;
  x[3] = std::atan2(-lin[2], lin[1]);
  if (options.fit_decay) x[4] = 0.0;

  CosineResidual functor(pts, sigma, options.fit_decay);
  Eigen::LevenbergMarquardt<CosineResidual> lm(functor);
  lm.setXtol(1e-15);
  lm.setFtol(1e-15);
  lm.setGtol(0.0);
  lm.setMaxfev(options.max_iterations * (static_cast<int>(x.size()) + 1));
  const auto status = lm.minimize(x);
  using namespace Eigen::LevenbergMarquardtSpace;
  if (status == ImproperInputParameters || status == TooManyFunctionEvaluation || !x.allFinite()) {
    std::ostringstream os;
    os << "fit_cosine: optimizer did not converge (status " << static_cast<int>(status) << ", "
       << lm.iterations() << " iterations, omega seed " << omega0 << ")";
    throw FitError(os.str());
  }

  Eigen::VectorXd fvec(n);
  functor(x, fvec);
  Eigen::MatrixXd jac(n, x.size());
  functor.df(x, jac);
  const Eigen::MatrixXd info = jac.transpose() * jac;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(info);
  Eigen::MatrixXd cov = lu.isInvertible()
                            ? Eigen::MatrixXd(lu.inverse())
                            : Eigen::MatrixXd::Constant(x.size(), x.size(), std::numeric_limits<double>::quiet_NaN());

  // Canonical form: amplitude >= 0, omega > 0, phase in (-pi, pi].
  Eigen::VectorXd sign = Eigen::VectorXd::Ones(x.size());
  if (x[1] < 0.0) {
    x[1] = -x[1];
    x[3] += kPi;
    sign[1] = -1.0;
  }
  if (x[2] < 0.0) {
    x[2] = -x[2];
    x[3] = -x[3];
    sign[2] = -1.0;
    sign[3] = -1.0;
  }
  cov = sign.asDiagonal() * cov * sign.asDiagonal();

  CosineFit fit;
  fit.offset = x[0];
  fit.amplitude = x[1];
  fit.omega = x[2];
  fit.phase = wrap_phase(x[3]);
  fit.decay = options.fit_decay ? x[4] : 0.0;
  fit.decay_free = options.fit_decay;
  fit.covariance = cov;
  fit.residual_norm = fvec.norm();
  fit.iterations = static_cast<int>(lm.iterations());
  return fit;
}

std::vector<dynamics::BellPoint> bell_from_fit(const CosineFit& fit, std::span<const double> t_grid) {
  std::vector<dynamics::BellPoint> out;
  out.reserve(t_grid.size());
  for (double t : t_grid) {
    const double q1 = fit(t), q2 = fit(2.0 * t);
    out.push_back({t, q1, q2, q2 - q1 * q1});
  }
  return out;
}

dynamics::BellMinimum minimize_bell_from_fit(const CosineFit& fit, double t_max, std::size_t grid_points) {
  if (!(t_max > 0.0)) throw DomainError("minimize_bell_from_fit: t_max must be > 0");
  const auto grid = numeric::open_linspace(0.0, t_max, std::max<std::size_t>(grid_points, 16));
  const auto m = numeric::minimize_sampled(
      [&](double t) {
        const double q1 = fit(t);
        return fit(2.0 * t) - q1 * q1;
      },
      grid);
  return {m.x, m.value};
}

PoissonMixtureFit fit_poisson_mixture(std::span<const std::int64_t> counts, const MixtureOptions& options) {
  if (counts.size() < 100) {
    std::ostringstream os;
    os << "fit_poisson_mixture: need at least 100 samples, got " << counts.size();
    throw InsufficientDataError(os.str());
  }
  const Compressed d = compress(counts);

  std::vector<std::int64_t> sorted(counts.begin(), counts.end());
  const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
  std::nth_element(sorted.begin(), mid, sorted.end());
  const double median = static_cast<double>(*mid);

  double n_lo = 0.0, sum_lo = 0.0, n_hi = 0.0, sum_hi = 0.0;
  for (std::size_t i = 0; i < d.value.size(); ++i) {
    if (d.value[i] <= median) {
      n_lo += d.weight[i];
      sum_lo += d.weight[i] * d.value[i];
    } else {
      n_hi += d.weight[i];
      sum_hi += d.weight[i] * d.value[i];
    }
  }

  auto degenerate_fit = [&](PoissonMixtureFit f) {
    f.lambda_low = f.lambda_high = d.mean;
    f.weight_low = 1.0;
    f.log_likelihood = mixture_log_likelihood(d, 1.0 - 1e-300, d.mean, d.mean);
    f.degenerate = true;
    return f;
  };

  if (n_hi == 0.0 || n_lo == 0.0) return degenerate_fit({});

  PoissonMixtureFit best = run_em(d, n_lo / d.n, sum_lo / n_lo, sum_hi / n_hi, options);
  if (options.restarts > 0) {
    Rng rng(options.seed);
    const double lo = d.value.front(), hi = d.value.back();
    for (int r = 0; r < options.restarts; ++r) {
      const double a = lo + (hi - lo) * rng.uniform();
      const double b = lo + (hi - lo) * rng.uniform();
      const double w = 0.05 + 0.9 * rng.uniform();
      auto f = run_em(d, w, std::min(a, b), std::max(a, b) + 1e-3, options);
      if (f.log_likelihood > best.log_likelihood) best = std::move(f);
    }
  }

  if (best.lambda_low > best.lambda_high) {
    std::swap(best.lambda_low, best.lambda_high);
    best.weight_low = 1.0 - best.weight_low;
  }
  const double ll_single = mixture_log_likelihood(d, 1.0 - 1e-300, d.mean, d.mean);
  const bool weak = 2.0 * (best.log_likelihood - ll_single) < options.min_lr_statistic;
  const bool collapsed = best.weight_low < 1e-9 || best.weight_low > 1.0 - 1e-9 ||
                         !(best.lambda_high - best.lambda_low > 1e-9 * (1.0 + best.lambda_high));
  if (weak || collapsed) return degenerate_fit(std::move(best));
  return best;
}

PoissonMixtureFit fit_poisson_mixture(const readout::HistogramData& histogram, const MixtureOptions& options) {
  std::vector<std::int64_t> counts;
  counts.reserve(static_cast<std::size_t>(histogram.n_total));
  for (std::size_t i = 0; i < histogram.counts.size(); ++i)
    counts.insert(counts.end(), static_cast<std::size_t>(histogram.counts[i]), histogram.bin_edges[i]);
  return fit_poisson_mixture(counts, options);
}

DwellTimes extract_dwell_times(const photophysics::FluorescenceTrace& trace, std::int64_t threshold, int debounce) {
  if (debounce < 1) throw DomainError("extract_dwell_times: debounce must be >= 1");
  if (!(trace.bin_width > 0.0)) throw DomainError("extract_dwell_times: bin_width must be > 0");
  struct Run {
    bool high;
    std::size_t length;
  };
  std::vector<Run> raw;
  for (auto c : trace.counts) {
    const bool high = readout::is_high(c, threshold);
    if (!raw.empty() && raw.back().high == high)
      ++raw.back().length;
    else
      raw.push_back({high, 1});
  }

  const auto m = static_cast<std::size_t>(debounce);
  std::vector<Run> runs;
  for (const Run& r : raw) {
    if (!runs.empty() && (r.length < m || runs.back().high == r.high)) {
      runs.back().length += r.length;
    } else {
      runs.push_back(r);
    }
  }
  if (runs.size() >= 2 && runs.front().length < m) {
    runs[1].length += runs[0].length;
    runs.erase(runs.begin());
  }

  DwellTimes out;
  out.degenerate = runs.size() < 2;
  for (const Run& r : runs) {
    const double d = static_cast<double>(r.length) * trace.bin_width;
    (r.high ? out.high : out.low).push_back(d);
  }
  return out;
}

}  // namespace tbi::analysis
