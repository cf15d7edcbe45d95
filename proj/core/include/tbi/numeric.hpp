#pragma once

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <vector>

namespace tbi::numeric {

struct Minimum {
  double x = 0.0;
  double value = std::numeric_limits<double>::infinity();
};

/// Scans f on the given abscissae (sorted ascending), then polishes the best
/// sample with Brent's method inside its neighbouring cells.
template <class F>
Minimum minimize_sampled(F&& f, const std::vector<double>& xs) {
  Minimum best;
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double v = f(xs[i]);
    if (v < best.value) {
      best = {xs[i], v};
      best_i = i;
    }
  }
  if (xs.size() < 3) return best;
  const double lo = xs[best_i == 0 ? 0 : best_i - 1];
  const double hi = xs[best_i + 1 == xs.size() ? best_i : best_i + 1];
  if (!(hi > lo)) return best;
  std::uintmax_t iters = 200;
  const auto [x, v] = boost::math::tools::brent_find_minima(f, lo, hi, 52, iters);
  if (v < best.value) best = {x, v};
  return best;
}

// n points evenly spaced on (lo, hi]; lo itself is excluded.
inline std::vector<double> open_linspace(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n);
  for (std::size_t i = 0; i < n; ++i) xs[i] = lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(n);
  return xs;
}

inline std::vector<double> logspace(double lo, double hi, std::size_t n) {
  std::vector<double> xs(n);
  const double a = std::log(lo), b = std::log(hi);
  for (std::size_t i = 0; i < n; ++i)
    xs[i] = std::exp(a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
  return xs;
}

}  // namespace tbi::numeric
