#include "tbi/analysis.hpp"
#include "tbi/dynamics.hpp"
#include "tbi/protocol.hpp"
#include "tbi/rng.hpp"

#include <benchmark/benchmark.h>

#include <numbers>
#include <random>
#include <vector>

using namespace tbi;

namespace {

const dynamics::RabiParams kRabi{2.0 * std::numbers::pi * 1e4, 0.3e4, 0.1e4};

void BM_SurvivalProbability(benchmark::State& state) {
  double t = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dynamics::survival_probability(kRabi, t));
    t += 1e-7;
  }
}
BENCHMARK(BM_SurvivalProbability);

void BM_BellCurve(benchmark::State& state) {
  std::vector<double> grid(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 2.0 * std::numbers::pi * (i + 1) / grid.size() / kRabi.omega;
  for (auto _ : state) benchmark::DoNotOptimize(dynamics::bell_curve(kRabi, grid));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BellCurve)->Arg(10000);

void BM_MasterEquation(benchmark::State& state) {
  const auto rho = dynamics::DensityMatrix::excited();
  const double t = 2.0 * std::numbers::pi / kRabi.omega;
  for (auto _ : state) benchmark::DoNotOptimize(dynamics::evolve_master_equation(rho, kRabi, t, 1e-3 / kRabi.omega));
}
BENCHMARK(BM_MasterEquation);

void BM_CriticalNoise(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(dynamics::critical_noise(1.0, 1e-9));
}
BENCHMARK(BM_CriticalNoise)->Unit(benchmark::kMillisecond);

void BM_RunShot(benchmark::State& state) {
  static const auto cfg = protocol::paper_calibrated_config({kRabi.omega, 0.0, 0.0});
  const auto threshold = cfg.resolved_charge_threshold();
  Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(protocol::run_shot(1e-5, cfg, threshold, rng));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_RunShot);

void BM_PoissonMixtureEm(benchmark::State& state) {
  Rng rng(2);
  std::vector<std::int64_t> counts;
  for (int i = 0; i < state.range(0); ++i)
    counts.push_back(std::poisson_distribution<std::int64_t>(rng.bernoulli(0.3) ? 2.0 : 20.0)(rng));
  for (auto _ : state) benchmark::DoNotOptimize(analysis::fit_poisson_mixture(counts));
}
BENCHMARK(BM_PoissonMixtureEm)->Arg(100000)->Unit(benchmark::kMillisecond);

void BM_CosineFit(benchmark::State& state) {
  std::vector<analysis::RabiPoint> pts;
  Rng rng(3);
  std::normal_distribution<double> noise(0.0, 0.005);
  for (int i = 0; i <= 40; ++i) {
    const double t = 4.0 * std::numbers::pi * i / 40.0;
    pts.push_back({t, 0.5 + 0.4 * std::cos(t) + noise(rng), 0.005});
  }
  for (auto _ : state) benchmark::DoNotOptimize(analysis::fit_cosine(pts));
}
BENCHMARK(BM_CosineFit);

}  // namespace

BENCHMARK_MAIN();
