// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failed criteria.

#include "tbi/commands.hpp"
#include "tbi/config.hpp"

#include "tbi/analysis.hpp"
#include "tbi/dynamics.hpp"
#include "tbi/photophysics.hpp"
#include "tbi/protocol.hpp"
#include "tbi/readout.hpp"
#include "tbi/rng.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace tbi;
namespace fs = std::filesystem;

namespace {

const dynamics::RabiParams kRabi{2.0 * std::numbers::pi * 1e4, 0.0, 0.0};

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string& s) { detail += (detail.empty() ? "" : "; ") + s; }
};

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sem(const std::vector<double>& v) {
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1) / v.size());
}

std::vector<double> nv_minus_dwells(const photophysics::PhotophysicsConfig& cfg,
                                    const photophysics::IlluminationSetting& il, std::size_t n, Rng& rng) {
  std::vector<double> out;
  while (out.size() < n) {
    const auto traj = photophysics::simulate_charge_trajectory(cfg, il, 300.0, rng);
    const auto d = traj.dwell_times(photophysics::ChargeState::NvMinus);
    out.insert(out.end(), d.begin(), d.end());
  }
  return out;
}

Verdict ideal_bound() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> grid;
  for (int i = 1; i <= 10000; ++i) grid.push_back(2.0 * std::numbers::pi * i / 10000.0);
  const auto curve = dynamics::bell_curve({1.0, 0.0, 0.0}, grid);
  auto best = curve.front();
  for (const auto& p : curve)
    if (p.b < best.b) best = p;
  const double dt = seconds_since(t0);
  const double grid_step_q = 2.0 * std::numbers::pi / 10000.0;
  v.require(std::abs(best.b + 1.0 / 3.0) <= 1e-6, "min B = -1/3 within 1e-6");
  v.require(std::abs(best.q_t - 2.0 / 3.0) <= grid_step_q, "q(t*) = 2/3");
  v.require(dt < 1.0, "runtime < 1 s");
  v.note("min B = " + fmt("%.9f", best.b) + " at q = " + fmt("%.6f", best.q_t) + ", " + fmt("%.3f s", dt));
  return v;
}

Verdict headline() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = protocol::paper_calibrated_config(kRabi);
  const auto f = readout::threshold_fidelity(cfg.readout.mean_photons_dark, cfg.readout.mean_photons_bright, 0.5,
                                             cfg.readout.threshold);
  v.require(std::abs(f.f_squared - 0.91) <= 0.005, "readout F^2 = 0.91");

  // Simulated Rabi scan, cosine fit, Bell minimum of the fit curve.
  std::vector<double> grid;
  for (int i = 0; i <= 40; ++i) grid.push_back(4.0 * std::numbers::pi * i / 40.0 / kRabi.omega);
  const StreamKey master{20260101, hash_label("acceptance/headline")};
  const std::size_t scan_shots = 20000;
  const auto scan = protocol::rabi_scan(grid, scan_shots, cfg, master.child("scan"));
  const auto fit = analysis::fit_cosine(protocol::to_rabi_points(scan));
  const auto fit_min = analysis::minimize_bell_from_fit(fit, std::numbers::pi / fit.omega);
  v.require(std::abs(fit_min.b + 0.209) <= 0.02, "fit-curve Bell minimum -0.209 +- 0.02");

  const auto model = protocol::shot_model(cfg);
  const auto dot = protocol::expected_red_dot(cfg, model);
  const auto used = protocol::required_shots(dot.q_t, dot.q_2t, 0.0039);
  const auto raw = protocol::plan_raw_shots(used, model.acceptance);
  const auto r = protocol::run_tbi_experiment(dot.t, raw.n_t, raw.n_2t, cfg, master.child("tbi"), 1, 3.0, &model);
  const std::size_t total = grid.size() * scan_shots + raw.n_t + raw.n_2t;
  const double dt = seconds_since(t0);

  v.require(r.b >= -0.23 && r.b <= -0.19, "B in [-0.23, -0.19]");
  v.require(r.b_stderr >= 0.0033 && r.b_stderr <= 0.0047, "B stderr in [0.0033, 0.0047]");
  v.require(r.n_sigma > 50.0, "n_sigma > 50");
  v.require(total <= 10'000'000, "<= 1e7 simulated shots");
  v.require(dt <= 300.0, "runtime <= 5 min");
  v.note("fit min B = " + fmt("%.4f", fit_min.b) + ", B = " + fmt("%.4f", r.b) + " +- " + fmt("%.4f", r.b_stderr) +
         ", n_sigma = " + fmt("%.1f", r.n_sigma) + ", shots = " + std::to_string(total) + ", " + fmt("%.1f s", dt));
  return v;
}

Verdict fidelity_round_trip() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cal = readout::calibrate_photon_rates(0.91, 2000, 3.0);
  const auto f = readout::threshold_fidelity(cal.mean_photons_dark, cal.mean_photons_bright, 0.5, cal.threshold);
  v.require(std::abs(f.f_squared - 0.91) <= 0.005, "F^2 = 0.91 +- 0.005");

  readout::ReadoutConfig rc;
  rc.mean_photons_dark = cal.mean_photons_dark;
  rc.mean_photons_bright = cal.mean_photons_bright;
  rc.threshold = cal.threshold;
  Rng rng(31337);
  const int n = 100000;
  int ok_dark = 0, ok_bright = 0;
  for (int i = 0; i < n; ++i) {
    ok_dark += !readout::is_high(readout::simulate_readout(readout::NuclearState::MPlus1, rc, rng).photon_count,
                                 rc.threshold);
    ok_bright += readout::is_high(readout::simulate_readout(readout::NuclearState::MOther, rc, rng).photon_count,
                                  rc.threshold);
  }
  const double pd = ok_dark / double(n), pb = ok_bright / double(n);
  const double sd = std::sqrt(f.f_assign_dark * (1.0 - f.f_assign_dark) / n);
  const double sb = std::sqrt(f.f_assign_bright * (1.0 - f.f_assign_bright) / n);
  const double dt = seconds_since(t0);
  v.require(std::abs(pd - f.f_assign_dark) <= 3.0 * sd, "MC dark fidelity within 3 sigma");
  v.require(std::abs(pb - f.f_assign_bright) <= 3.0 * sb, "MC bright fidelity within 3 sigma");
  v.require(dt < 30.0, "runtime < 30 s");
  v.note("F^2 = " + fmt("%.5f", f.f_squared) + ", MC dark " + fmt("%.4f", pd) + " vs " +
         fmt("%.4f", f.f_assign_dark) + ", bright " + fmt("%.4f", pb) + " vs " + fmt("%.4f", f.f_assign_bright) +
         ", " + fmt("%.2f s", dt));
  return v;
}

Verdict charge_physics() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = photophysics::PhotophysicsConfig::defaults();
  Rng rng(4242);

  const auto d = nv_minus_dwells(cfg, photophysics::IlluminationSetting::orange_default(), 200, rng);
  v.require(d.size() >= 200, ">= 200 dwells");
  v.require(std::abs(mean(d) - 0.6) <= 3.0 * sem(d), "mean NV- dwell 600 ms within 3 SE");

  const auto green = photophysics::simulate_charge_trajectory(cfg, photophysics::IlluminationSetting::green_default(),
                                                              50.0, rng);
  const double occ0 = green.occupancy(photophysics::ChargeState::NvZero);
  v.require(std::abs(occ0 - 0.30) <= 0.01, "GREEN NV0 occupancy 0.30 +- 0.01");

  const auto reset = photophysics::charge_rates(cfg, photophysics::IlluminationSetting::green_default());
  std::vector<std::int64_t> counts;
  for (int i = 0; i < 100000; ++i) {
    const auto s = photophysics::sample_steady_state(reset, rng);
    counts.push_back(
        photophysics::charge_measurement(cfg, photophysics::IlluminationSetting::orange_default(), protocol::ExperimentConfig{}.charge_pulse,
                                         rng, s)
            .photon_count);
  }
  const auto mix = analysis::fit_poisson_mixture(readout::build_histogram(counts, 1));
  v.require(std::abs(mix.weight_high() - 0.70) <= 0.02, "mixture weight_high 0.70 +- 0.02");
  const double dt = seconds_since(t0);
  v.require(dt < 60.0, "runtime < 1 min");
  v.note("dwell " + fmt("%.4f", mean(d)) + " +- " + fmt("%.4f s", sem(d)) + " (n=" + std::to_string(d.size()) +
         "), NV0 occupancy " + fmt("%.4f", occ0) + ", weight_high " + fmt("%.4f", mix.weight_high()) + ", " +
         fmt("%.2f s", dt));
  return v;
}

Verdict quadratic_ionization() {
  Verdict v;
  const auto cfg = photophysics::PhotophysicsConfig::defaults();
  auto il = photophysics::IlluminationSetting::orange_default();
  const double full = photophysics::charge_rates(cfg, il).ionization;
  auto half_il = il;
  half_il.power *= 0.5;
  const double half = photophysics::charge_rates(cfg, half_il).ionization;
  const double analytic = full / half;
  v.require(analytic == 4.0, "analytic ratio exactly 4");

  Rng rng(777);
  const auto d_full = nv_minus_dwells(cfg, il, 3000, rng);
  std::vector<double> d_half;
  while (d_half.size() < 3000) {
    const auto traj = photophysics::simulate_charge_trajectory(cfg, half_il, 1200.0, rng);
    const auto part = traj.dwell_times(photophysics::ChargeState::NvMinus);
    d_half.insert(d_half.end(), part.begin(), part.end());
  }
  const double ratio = mean(d_half) / mean(d_full);
  v.require(std::abs(ratio - 4.0) <= 0.2, "simulated ratio 4.0 +- 0.2");
  v.note("simulated ratio " + fmt("%.3f", ratio) + ", analytic " + fmt("%.1f", analytic));
  return v;
}

Verdict crossover() {
  Verdict v;
  const double tol = 1e-9;
  const auto cn = dynamics::critical_noise(1.0, tol);
  // Independent grid-search oracle over two periods.
  auto grid_min = [](double gamma) {
    double best = 1.0;
    for (int i = 1; i <= 400000; ++i) best = std::min(best, dynamics::bell_value({1.0, gamma, 0.0}, 4.0 * std::numbers::pi * i / 400000.0));
    return best;
  };
  const double below = grid_min(0.9 * cn.gamma_star);
  const double above = grid_min(1.1 * cn.gamma_star);
  v.require(below < -1e-4, "min B(0.9 gamma*) < -1e-4");
  v.require(above > -1e-6, "min B(1.1 gamma*) > -1e-6");

  const double omega2 = kRabi.omega;
  const auto cn2 = dynamics::critical_noise(omega2, tol * omega2);
  const double drift = std::abs(cn2.gamma_star / omega2 - cn.gamma_star);
  v.require(drift <= tol, "gamma*/omega invariant under rescaling within tol");
  v.note("gamma*/omega = " + fmt("%.10f", cn.gamma_star) + ", grid oracle min B(0.9) = " + fmt("%.3e", below) +
         ", min B(1.1) = " + fmt("%.3e", above) + ", rescaling drift " + fmt("%.2e", drift));
  return v;
}

Verdict oracle_equivalence() {
  Verdict v;
  const auto t0 = std::chrono::steady_clock::now();
  const auto cfg = protocol::ExperimentConfig::ideal(kRabi);
  const StreamKey key{99, hash_label("acceptance/oracle")};
  double worst = 0.0;
  for (int k = 0; k < 12; ++k) {
    const double t = (0.2 + 0.25 * k) / kRabi.omega;
    const auto r = protocol::run_tbi_experiment(t, 100000, 100000, cfg, key.child(static_cast<std::uint64_t>(k)));
    const double exact = dynamics::bell_value(kRabi, t);
    const double z = r.b_stderr > 0.0 ? std::abs(r.b - exact) / r.b_stderr : (r.b == exact ? 0.0 : 1e9);
    worst = std::max(worst, z);
    v.require(z <= 3.0, "point " + std::to_string(k) + " within 3 sigma");
  }
  const double dt = seconds_since(t0);
  v.require(dt < 120.0, "runtime < 2 min");
  v.note("worst deviation " + fmt("%.2f sigma", worst) + ", " + fmt("%.1f s", dt));
  return v;
}

Verdict stationarity() {
  Verdict v;
  Rng rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const dynamics::RabiParams p{0.5 + 3.0 * rng.uniform(), 0.5 * rng.uniform(), 0.5 * rng.uniform()};
    const double delta = 0.1 + 3.0 * rng.uniform();
    std::vector<double> starts{0.0};
    for (int k = 0; k < 4; ++k) starts.push_back(10.0 * rng.uniform());
    worst = std::max(worst, dynamics::stationarity_check(p, delta, starts));
  }
  v.require(worst <= 1e-8, "spread <= 1e-8");
  v.note("largest spread " + fmt("%.2e", worst));
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Verdict determinism() {
  Verdict v;
  const fs::path root = fs::temp_directory_path() / "tbi_acceptance_determinism";
  fs::remove_all(root);
  auto run = [&](unsigned workers, const std::string& sub) {
    cli::CliOptions o;
    o.seed = 123456789;
    o.workers = workers;
    o.out = (root / sub).string();
    const auto rc = cli::resolve_config(o);
    cli::OutputSink sink(rc, "simulate/tbi-point", cli::TableFormat::Csv);
    return cli::cmd_simulate_tbi_point(rc, sink).dump(2);
  };
  const auto a = run(1, "w1");
  const auto b = run(4, "w4");
  const auto fa = slurp(root / "w1" / "tbi_point.json");
  const auto fb = slurp(root / "w4" / "tbi_point.json");
  v.require(!fa.empty() && fa == fb, "summary JSON byte-identical");
  v.require(a == b, "returned summaries identical");
  v.note("summary " + std::to_string(fa.size()) + " bytes, workers 1 vs 4");
  fs::remove_all(root);
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"ideal bound", ideal_bound},
      {"headline violation", headline},
      {"fidelity round trip", fidelity_round_trip},
      {"charge physics", charge_physics},
      {"quadratic ionization", quadratic_ionization},
      {"crossover property", crossover},
      {"end-to-end oracle equivalence", oracle_equivalence},
      {"stationarity", stationarity},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    failed += !v.pass;
    std::printf("%s criterion %zu (%s): %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
