#include "commands.hpp"

#include "csv.hpp"

#include "tbi/analysis.hpp"
#include "tbi/dynamics.hpp"
#include "tbi/error.hpp"
#include "tbi/parallel.hpp"
#include "tbi/photophysics.hpp"
#include "tbi/protocol.hpp"
#include "tbi/readout.hpp"
#include "tbi/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace tbi::cli {

namespace {

using ojson = nlohmann::ordered_json;
using Row = std::vector<std::string>;

std::string num(double v) { return format_number(v); }
std::string num(std::int64_t v) { return std::to_string(v); }
std::string num(std::size_t v) { return std::to_string(v); }

StreamKey command_key(const RunConfig& config, std::string_view command) {
  return StreamKey{config.master_seed, hash_label(command)};
}

ojson header_json(const RunConfig& config, std::string_view command) {
  ojson j;
  j["command"] = std::string(command);
  j["config_hash"] = hex64(config.config_hash);
  j["master_seed"] = config.master_seed;
  return j;
}

ojson bell_min_json(const dynamics::BellMinimum& m, double omega) {
  ojson j;
  j["t"] = m.t;
  j["omega_t"] = m.t * omega;
  j["b"] = m.b;
  return j;
}

std::vector<Row> bell_rows(const std::vector<dynamics::BellPoint>& pts, double omega) {
  std::vector<Row> rows;
  rows.reserve(pts.size());
  for (const auto& p : pts) rows.push_back({num(p.t), num(p.t * omega), num(p.q_t), num(p.q_2t), num(p.b)});
  return rows;
}

const std::vector<std::string> kBellHeader{"t", "omega_t", "q_t", "q_2t", "B"};

ojson bell_section(const dynamics::RabiParams& params, const std::vector<double>& grid, OutputSink& sink,
                   const std::string& stem) {
  const auto pts = dynamics::bell_curve(params, grid);
  sink.table(stem, kBellHeader, bell_rows(pts, params.omega));
  const auto best = std::min_element(pts.begin(), pts.end(),
                                     [](const auto& a, const auto& b) { return a.b < b.b; });
  ojson j;
  j["gamma_phi"] = params.gamma_phi;
  j["gamma_1"] = params.gamma_1;
  j["gamma_eff"] = params.gamma_eff();
  j["grid_points"] = pts.size();
  j["grid_min"] = {{"t", best->t}, {"omega_t", best->t * params.omega}, {"q_t", best->q_t},
                   {"q_2t", best->q_2t}, {"b", best->b}};
  j["refined_min"] = bell_min_json(dynamics::minimize_bell(params, grid.back()), params.omega);
  j["violation"] = best->b < 0.0;
  return j;
}

ojson cosine_fit_json(const analysis::CosineFit& fit) {
  ojson p;
  const char* names[] = {"offset", "amplitude", "omega", "phase", "decay"};
  const double values[] = {fit.offset, fit.amplitude, fit.omega, fit.phase, fit.decay};
  const int n = fit.decay_free ? 5 : 4;
  for (int i = 0; i < 5; ++i) p[names[i]] = values[i];
  ojson s;
  for (int i = 0; i < n; ++i) s[names[i]] = fit.sigma(i);
  ojson cov = ojson::array();
  for (int r = 0; r < fit.covariance.rows(); ++r) {
    ojson row = ojson::array();
    for (int c = 0; c < fit.covariance.cols(); ++c) row.push_back(fit.covariance(r, c));
    cov.push_back(row);
  }
  ojson order = ojson::array();
  for (int i = 0; i < n; ++i) order.push_back(names[i]);
  ojson j;
  j["model"] = fit.decay_free ? "offset + amplitude * exp(-decay t) * cos(omega t + phase)"
                              : "offset + amplitude * cos(omega t + phase)";
  j["parameters"] = p;
  j["sigma"] = s;
  j["covariance_order"] = order;
  j["covariance"] = cov;
  j["contrast"] = 2.0 * fit.amplitude;
  j["contrast_sigma"] = 2.0 * fit.sigma(1);
  j["residual_norm"] = fit.residual_norm;
  j["iterations"] = fit.iterations;
  return j;
}

ojson mixture_json(const analysis::PoissonMixtureFit& fit) {
  ojson j;
  j["lambda_low"] = fit.lambda_low;
  j["lambda_high"] = fit.lambda_high;
  j["weight_low"] = fit.weight_low;
  j["weight_high"] = fit.weight_high();
  j["log_likelihood"] = fit.log_likelihood;
  j["iterations"] = fit.iterations;
  j["degenerate"] = fit.degenerate;
  return j;
}

ojson q_json(const protocol::QEstimate& q) {
  ojson j;
  j["tau"] = q.tau;
  j["q_hat"] = q.q_hat;
  j["stderr_binomial"] = q.stderr_binomial;
  j["stderr_batch"] = q.stderr_batch;
  j["n_used"] = q.n_used;
  j["n_discarded"] = q.n_discarded;
  j["n_batches"] = q.n_batches;
  return j;
}

ojson histogram_rows(const readout::HistogramData& h, OutputSink& sink, const std::string& stem) {
  std::vector<Row> rows;
  for (std::size_t i = 0; i < h.counts.size(); ++i)
    rows.push_back({num(h.bin_edges[i]), num(h.bin_edges[i + 1]), num(h.counts[i])});
  sink.table(stem, {"bin_lo", "bin_hi", "count"}, rows);
  return ojson{{"bins", h.counts.size()}, {"n_total", h.n_total}};
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

ojson dwell_stats(const std::vector<double>& v) {
  return ojson{{"n", v.size()}, {"mean", mean_of(v)}, {"stderr", stderr_of(v)}};
}

photophysics::FluorescenceTrace simulated_trace(const RunConfig& config, std::string_view command,
                                                photophysics::ChargeTrajectory* trajectory_out = nullptr) {
  Rng rng = command_key(config, command).stream(0);
  const auto& pp = config.experiment.photophysics;
  auto traj = photophysics::simulate_charge_trajectory(pp, config.trace.setting, config.trace.duration, rng);
  auto trace = photophysics::render_trace(traj, pp, config.trace.setting, config.trace.bin_width, rng);
  if (trajectory_out) *trajectory_out = std::move(traj);
  return trace;
}

}  // namespace

RunConfig resolve_config(const CliOptions& options) {
  RunConfig rc = options.config_path ? load_run_config(*options.config_path)
                                     : parse_run_config(nlohmann::json::object());
  if (options.seed) rc.master_seed = *options.seed;
  if (options.workers) {
    if (*options.workers < 1 || *options.workers > 1024)
      throw Error(ErrorCode::Config, "--workers must lie in [1, 1024]");
    rc.workers = *options.workers;
  }
  if (options.out) rc.output_dir = *options.out;
  finalize(rc);
  return rc;
}

OutputSink::OutputSink(const RunConfig& config, std::string command, TableFormat format)
    : dir_(config.output_dir),
      command_(std::move(command)),
      format_(format),
      hash_(hex64(config.config_hash)),
      seed_(config.master_seed) {}

void OutputSink::commit(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + dir_.string() + ": " + ec.message());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  out.close();
  if (!out) throw Error(ErrorCode::Io, "failed to write " + path.string());
  written_.push_back(path.string());
}

void OutputSink::table(const std::string& stem, const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream os;
  if (format_ == TableFormat::Csv) {
    CsvTable t;
    t.comments.push_back(" config_hash=" + hash_ + " master_seed=" + std::to_string(seed_) +
                         " command=" + command_);
    t.header = header;
    t.rows = rows;
    write_csv(os, t);
    commit(dir_ / (stem + ".csv"), os.str());
    return;
  }
  ojson j;
  j["config_hash"] = hash_;
  j["master_seed"] = seed_;
  j["command"] = command_;
  j["columns"] = header;
  ojson data = ojson::array();
  for (const auto& row : rows) {
    ojson r = ojson::array();
    for (const auto& cell : row) {
      const char* end = cell.data() + cell.size();
      std::int64_t iv = 0;
      double dv = 0.0;
      if (auto res = std::from_chars(cell.data(), end, iv); res.ec == std::errc() && res.ptr == end)
        r.push_back(iv);
      else if (auto res2 = std::from_chars(cell.data(), end, dv); res2.ec == std::errc() && res2.ptr == end)
        r.push_back(dv);
      else
        r.push_back(cell);
    }
    data.push_back(std::move(r));
  }
  j["rows"] = std::move(data);
  os << j.dump() << '\n';
  commit(dir_ / (stem + ".json"), os.str());
}

void OutputSink::summary(const std::string& stem, const ojson& body) {
  commit(dir_ / (stem + ".json"), body.dump(2) + "\n");
}

ojson cmd_bell_curve(const RunConfig& config, OutputSink& sink) {
  const auto& spec = config.bell_curve;
  const double omega = config.experiment.rabi.omega;
  ojson j = header_json(config, "bell-curve");
  j["omega"] = omega;
  j["ideal"] = bell_section({omega, 0.0, 0.0}, spec.grid.values, sink, "bell_curve_ideal");
  j["damped"] = bell_section({omega, spec.damped_gamma_phi, spec.damped_gamma_1}, spec.grid.values, sink,
                             "bell_curve_damped");
  sink.summary("bell_curve", j);
  return j;
}

ojson cmd_critical_noise(const RunConfig& config, OutputSink& sink) {
  const auto& spec = config.critical_noise;
  const auto cn = dynamics::critical_noise(spec.omega, spec.tol);
  std::vector<double> grid;
  for (int i = 1; i <= 1000; ++i) grid.push_back(2.0 * std::numbers::pi * i / 1000.0 / spec.omega);
  const auto at_star = dynamics::bell_curve({spec.omega, cn.gamma_star, 0.0}, grid);
  sink.table("critical_noise_curve", kBellHeader, bell_rows(at_star, spec.omega));

  ojson j = header_json(config, "critical-noise");
  j["omega"] = spec.omega;
  j["tol"] = spec.tol;
  j["gamma_star"] = cn.gamma_star;
  j["gamma_star_over_omega"] = cn.gamma_star / spec.omega;
  j["bracket"] = {cn.bracket_lo, cn.bracket_hi};
  j["minimizer_t"] = cn.minimizer_t;
  j["minimizer_omega_t"] = cn.minimizer_t * spec.omega;
  j["min_b_at_bracket_lo"] = cn.min_b_lo;
  j["min_b_at_bracket_hi"] = cn.min_b_hi;
  j["iterations"] = cn.iterations;
  sink.summary("critical_noise", j);
  return j;
}

ojson cmd_simulate_rabi_scan(const RunConfig& config, OutputSink& sink) {
  const auto& spec = config.rabi_scan;
  const auto& e = config.experiment;
  const auto scan = protocol::rabi_scan(spec.grid.values, spec.shots_per_point, e,
                                        command_key(config, "simulate/rabi-scan"), config.workers);
  std::vector<Row> rows;
  std::size_t used = 0, discarded = 0;
  for (const auto& q : scan) {
    rows.push_back({num(q.tau), num(q.tau * e.rabi.omega), num(q.q_hat), num(q.stderr_binomial),
                    num(q.stderr_batch), num(q.n_used), num(q.n_discarded)});
    used += q.n_used;
    discarded += q.n_discarded;
  }
  sink.table("rabi_scan", {"tau", "omega_t", "q", "std_error", "stderr_batch", "n_used", "n_discarded"}, rows);

  ojson j = header_json(config, "simulate/rabi-scan");
  j["points"] = scan.size();
  j["shots_per_point"] = spec.shots_per_point;
  j["shots_used"] = used;
  j["shots_discarded"] = discarded;
  try {
    const auto fit = analysis::fit_cosine(protocol::to_rabi_points(scan), {spec.fit_decay});
    j["fit"] = cosine_fit_json(fit);
    const auto m = analysis::minimize_bell_from_fit(fit, std::numbers::pi / fit.omega);
    j["fit_bell_min"] = bell_min_json(m, fit.omega);
  } catch (const Error& err) {
    j["fit"] = nullptr;
    j["fit_error"] = {{"code", std::string(to_string(err.code()))}, {"message", err.what()}};
  }
  sink.summary("rabi_scan_summary", j);
  return j;
}

ojson cmd_simulate_tbi_point(const RunConfig& config, OutputSink& sink) {
  const auto& spec = config.tbi_point;
  const auto& e = config.experiment;
  const auto model = protocol::shot_model(e);
  const auto dot = protocol::expected_red_dot(e, model);
  const double t = spec.t.value_or(dot.t);
  const double omega = e.rabi.omega;
  const double q_t = model.expected_q(dynamics::survival_probability(e.rabi, t));
  const double q_2t = model.expected_q(dynamics::survival_probability(e.rabi, 2.0 * t));

  protocol::ShotPlan raw{spec.shots_t.value_or(0), spec.shots_2t.value_or(0)};
  protocol::ShotPlan used{};
  if (!spec.shots_t || !spec.shots_2t) {
    used = protocol::required_shots(std::clamp(q_t, 1e-6, 1.0 - 1e-6), std::clamp(q_2t, 1e-6, 1.0 - 1e-6),
                                    spec.target_stderr);
    const auto planned = protocol::plan_raw_shots(used, model.acceptance);
    if (!spec.shots_t) raw.n_t = planned.n_t;
    if (!spec.shots_2t) raw.n_2t = planned.n_2t;
  }

  const StreamKey key = command_key(config, "simulate/tbi-point");
  const auto r = protocol::run_tbi_experiment(t, raw.n_t, raw.n_2t, e, key, config.workers, spec.k_sigma, &model);

  if (spec.write_shots) {
    std::vector<Row> rows;
    rows.reserve(raw.n_t + raw.n_2t);
    auto emit = [&](const char* group, double tau, std::size_t n, const StreamKey& k) {
      const auto shots = protocol::run_shots(tau, n, e, k, config.workers);
      for (std::size_t i = 0; i < shots.size(); ++i) {
        const auto& s = shots[i];
        rows.push_back({group, num(i), num(s.tau), std::string(readout::to_string(s.init_state)),
                        num(s.init_counts), num(s.charge_counts), s.charge_accepted ? "1" : "0",
                        num(s.final_counts), std::string(readout::to_string(s.final_state_classified)),
                        std::string(readout::to_string(s.true_final_state)),
                        std::string(photophysics::to_string(s.true_charge_state)), s.survived() ? "1" : "0"});
      }
    };
    emit("t", t, raw.n_t, key.child("q_t"));
    emit("2t", 2.0 * t, raw.n_2t, key.child("q_2t"));
    sink.table("tbi_shots",
               {"group", "shot_index", "tau", "init_state", "init_counts", "charge_counts", "charge_accepted",
                "final_counts", "final_state", "true_final_state", "true_charge_state", "survived"},
               rows);
  }

  ojson j = header_json(config, "simulate/tbi-point");
  j["t"] = t;
  j["omega_t"] = t * omega;
  j["q_t"] = q_json(r.q_t);
  j["q_2t"] = q_json(r.q_2t);
  j["b"] = r.b;
  j["b_stderr"] = r.b_stderr;
  j["b_stderr_batch"] = r.b_stderr_batch;
  j["n_sigma"] = r.n_sigma;
  j["k_sigma"] = r.k_sigma;
  j["violation"] = r.violation;
  j["shots_discarded"] = r.shots_discarded;
  j["corrected"] = {{"q_t", r.q_t_corrected}, {"q_2t", r.q_2t_corrected}, {"b", r.b_corrected}};
  j["plan"] = {{"target_stderr", spec.target_stderr},
               {"used_t", used.n_t},
               {"used_2t", used.n_2t},
               {"raw_t", raw.n_t},
               {"raw_2t", raw.n_2t}};
  j["expected"] = {{"q_t", q_t}, {"q_2t", q_2t}, {"b", dynamics::bell_functional(q_t, q_2t)}};
  j["red_dot"] = {{"t", dot.t}, {"omega_t", dot.t * omega}, {"b", dot.b}, {"q_t", dot.q_t}, {"q_2t", dot.q_2t}};
  j["shot_model"] = {{"offset", model.offset},
                     {"slope", model.slope},
                     {"acceptance", model.acceptance},
                     {"p_nv_minus_given_accept", model.p_nv_minus_given_accept}};
  sink.summary("tbi_point", j);
  return j;
}

ojson cmd_simulate_trace(const RunConfig& config, OutputSink& sink) {
  photophysics::ChargeTrajectory traj;
  const auto trace = simulated_trace(config, "simulate/trace", &traj);
  std::vector<Row> rows;
  rows.reserve(trace.counts.size());
  for (std::size_t i = 0; i < trace.counts.size(); ++i)
    rows.push_back({num(static_cast<double>(i) * trace.bin_width), num(trace.counts[i]),
                    std::string(photophysics::to_string(trace.true_states[i]))});
  sink.table("trace", {"bin_start_s", "count", "true_state"}, rows);

  const auto rates = photophysics::charge_rates(config.experiment.photophysics, config.trace.setting);
  ojson j = header_json(config, "simulate/trace");
  j["duration"] = config.trace.duration;
  j["bin_width"] = trace.bin_width;
  j["bins"] = trace.counts.size();
  j["illumination"] = std::string(photophysics::to_string(config.trace.setting.label));
  j["power"] = config.trace.setting.power;
  j["ionization_rate"] = rates.ionization;
  j["recombination_rate"] = rates.recombination;
  j["steady_state_nv_minus"] = rates.steady_state_nv_minus();
  j["occupancy_nv_minus"] = traj.occupancy(photophysics::ChargeState::NvMinus);
  j["switches"] = traj.segments.size() - 1;
  j["dwell_nv_minus"] = dwell_stats(traj.dwell_times(photophysics::ChargeState::NvMinus));
  j["dwell_nv_zero"] = dwell_stats(traj.dwell_times(photophysics::ChargeState::NvZero));
  sink.summary("trace_summary", j);
  return j;
}

ojson cmd_simulate_histogram(const RunConfig& config, OutputSink& sink) {
  const auto& e = config.experiment;
  const auto& spec = config.histogram;
  const StreamKey key = command_key(config, "simulate/histogram");
  std::vector<std::int64_t> counts(spec.shots);
  std::vector<std::uint8_t> plus1(spec.shots);
  parallel_for(spec.shots, config.workers, [&](std::size_t i) {
    Rng rng = key.stream(i);
    const auto s = rng.bernoulli(e.prior_plus1) ? readout::NuclearState::MPlus1 : readout::NuclearState::MOther;
    plus1[i] = s == readout::NuclearState::MPlus1;
    counts[i] = readout::simulate_readout(s, e.readout, rng).photon_count;
  });
  const auto h = readout::build_histogram(counts, spec.bin_width);
  ojson j = header_json(config, "simulate/histogram");
  j["histogram"] = histogram_rows(h, sink, "histogram");
  const auto n_plus1 = std::count(plus1.begin(), plus1.end(), std::uint8_t{1});
  const auto n_low = std::count_if(counts.begin(), counts.end(),
                                   [&](std::int64_t c) { return !readout::is_high(c, e.readout.threshold); });
  j["shots"] = spec.shots;
  j["true_fraction_m_plus1"] = static_cast<double>(n_plus1) / static_cast<double>(spec.shots);
  j["classified_fraction_m_plus1"] = static_cast<double>(n_low) / static_cast<double>(spec.shots);
  j["threshold"] = e.readout.threshold;
  j["mean_photons_dark"] = e.readout.mean_photons_dark;
  j["mean_photons_bright"] = e.readout.mean_photons_bright;
  const auto fid = readout::threshold_fidelity(e.readout.mean_photons_dark, e.readout.mean_photons_bright,
                                               e.prior_plus1, e.readout.threshold);
  j["f_assign_dark"] = fid.f_assign_dark;
  j["f_assign_bright"] = fid.f_assign_bright;
  j["f_squared"] = fid.f_squared;
  sink.summary("histogram_summary", j);
  return j;
}

ojson cmd_simulate_charge_histogram(const RunConfig& config, OutputSink& sink) {
  const auto& e = config.experiment;
  const auto& spec = config.charge_histogram;
  const StreamKey key = command_key(config, "simulate/charge-histogram");
  const auto reset = photophysics::charge_rates(e.photophysics, e.reset_illumination);
  std::vector<std::int64_t> counts(spec.shots);
  std::vector<std::uint8_t> minus(spec.shots);
  parallel_for(spec.shots, config.workers, [&](std::size_t i) {
    Rng rng = key.stream(i);
    const auto initial = photophysics::sample_steady_state(reset, rng);
    minus[i] = initial == photophysics::ChargeState::NvMinus;
    counts[i] =
        photophysics::charge_measurement(e.photophysics, e.charge_illumination, e.charge_pulse, rng, initial)
            .photon_count;
  });
  const auto h = readout::build_histogram(counts, spec.bin_width);
  ojson j = header_json(config, "simulate/charge-histogram");
  j["histogram"] = histogram_rows(h, sink, "charge_histogram");
  const std::int64_t th = e.resolved_charge_threshold();
  const auto n_minus = std::count(minus.begin(), minus.end(), std::uint8_t{1});
  const auto n_high = std::count_if(counts.begin(), counts.end(), [&](std::int64_t c) { return readout::is_high(c, th); });
  j["shots"] = spec.shots;
  j["pulse"] = e.charge_pulse;
  j["true_fraction_nv_minus"] = static_cast<double>(n_minus) / static_cast<double>(spec.shots);
  j["steady_state_nv_minus"] = reset.steady_state_nv_minus();
  j["charge_threshold"] = th;
  j["accepted_fraction"] = static_cast<double>(n_high) / static_cast<double>(spec.shots);
  sink.summary("charge_histogram_summary", j);
  return j;
}

ojson cmd_fit_cosine(const RunConfig& config, const std::string& input, OutputSink& sink) {
  const auto table = read_csv_file(input);
  const CsvColumns cols(table);
  const auto tau = cols.has("tau") ? cols.doubles("tau") : cols.doubles("t");
  const auto q = cols.doubles("q");
  std::vector<double> se(q.size(), 1.0);
  if (cols.has("std_error")) se = cols.doubles("std_error");
  if (table.rows.size() < 6)
    throw InsufficientDataError("fit cosine: " + input + " has " + std::to_string(table.rows.size()) +
                                " data rows; at least 6 are needed");
  std::vector<analysis::RabiPoint> pts;
  for (std::size_t i = 0; i < q.size(); ++i) pts.push_back({tau[i], q[i], se[i]});
  const auto fit = analysis::fit_cosine(pts, {config.rabi_scan.fit_decay});

  ojson j = header_json(config, "fit/cosine");
  j["input"] = input;
  j["points"] = pts.size();
  j["fit"] = cosine_fit_json(fit);
  j["fit_bell_min"] = bell_min_json(analysis::minimize_bell_from_fit(fit, std::numbers::pi / fit.omega), fit.omega);
  sink.summary("fit_cosine", j);
  return j;
}

ojson cmd_fit_mixture(const RunConfig& config, const std::string& input, OutputSink& sink) {
  const auto table = read_csv_file(input);
  const CsvColumns cols(table);
  if (table.rows.size() < 2)
    throw InsufficientDataError("fit mixture: " + input + " has " + std::to_string(table.rows.size()) +
                                " data rows");
  analysis::PoissonMixtureFit fit;
  std::string source;
  if (cols.has("bin_lo") && cols.has("bin_hi") && cols.has("count")) {
    readout::HistogramData h;
    const auto lo = cols.integers("bin_lo");
    const auto hi = cols.integers("bin_hi");
    h.counts = cols.integers("count");
    h.bin_edges = lo;
    h.bin_edges.push_back(hi.back());
    for (std::size_t i = 0; i + 1 < lo.size(); ++i)
      if (hi[i] != lo[i + 1] || hi[i] <= lo[i])
        throw Error(ErrorCode::MalformedCsv, input + ": line " + std::to_string(table.row_lines[i]) +
                                                 ": histogram bins must be contiguous and increasing");
    for (std::size_t i = 0; i < h.counts.size(); ++i) {
      if (h.counts[i] < 0)
        throw Error(ErrorCode::MalformedCsv,
                    input + ": line " + std::to_string(table.row_lines[i]) + ": negative bin count");
      h.n_total += h.counts[i];
    }
    fit = analysis::fit_poisson_mixture(h);
    source = "histogram";
  } else {
    fit = analysis::fit_poisson_mixture(cols.integers("count"));
    source = "counts";
  }
  ojson j = header_json(config, "fit/mixture");
  j["input"] = input;
  j["input_kind"] = source;
  j["fit"] = mixture_json(fit);
  sink.summary("fit_mixture", j);
  return j;
}

ojson cmd_dwell_times(const RunConfig& config, const std::optional<std::string>& input, OutputSink& sink) {
  photophysics::FluorescenceTrace trace;
  if (input) {
    const auto table = read_csv_file(*input);
    const CsvColumns cols(table);
    if (table.rows.size() < 2)
      throw InsufficientDataError("dwell-times: " + *input + " needs at least two bins");
    const auto starts = cols.doubles("bin_start_s");
    trace.counts = cols.integers("count");
    trace.bin_width = starts[1] - starts[0];
    if (!(trace.bin_width > 0.0))
      throw Error(ErrorCode::MalformedCsv, *input + ": bin_start_s must increase");
  } else {
    trace = simulated_trace(config, "dwell-times");
  }

  ojson j = header_json(config, "dwell-times");
  j["source"] = input ? *input : std::string("simulated");
  std::int64_t threshold = 0;
  if (config.dwell_times.threshold) {
    threshold = *config.dwell_times.threshold;
    j["threshold_source"] = "config";
  } else {
    const auto mix = analysis::fit_poisson_mixture(trace.counts);
    j["mixture"] = mixture_json(mix);
    threshold = mix.degenerate ? static_cast<std::int64_t>(std::floor(mix.lambda_high))
                               : readout::optimal_threshold(mix.lambda_low, mix.lambda_high, mix.weight_low,
                                                            readout::ThresholdObjective::Balanced);
    j["threshold_source"] = "mixture";
  }
  const auto d = analysis::extract_dwell_times(trace, threshold, config.dwell_times.debounce);
  std::vector<Row> rows;
  for (double v : d.low) rows.push_back({"low", num(v)});
  for (double v : d.high) rows.push_back({"high", num(v)});
  sink.table("dwell_times", {"level", "dwell_s"}, rows);
  j["threshold"] = threshold;
  j["debounce"] = config.dwell_times.debounce;
  j["bin_width"] = trace.bin_width;
  j["degenerate"] = d.degenerate;
  j["low"] = dwell_stats(d.low);
  j["high"] = dwell_stats(d.high);
  sink.summary("dwell_times_summary", j);
  return j;
}

ojson cmd_calibrate(const RunConfig& config) {
  const auto& e = config.experiment;
  const auto fid = readout::threshold_fidelity(e.readout.mean_photons_dark, e.readout.mean_photons_bright, 0.5,
                                               e.readout.threshold);
  const auto reset = photophysics::charge_rates(e.photophysics, e.reset_illumination);
  const auto orange = photophysics::charge_rates(e.photophysics, e.charge_illumination);
  const auto model = protocol::shot_model(e);
  const auto dot = protocol::expected_red_dot(e, model);
  ojson j = header_json(config, "calibrate");
  j["preset"] = config.preset;
  j["readout"] = {{"n_repeats", e.readout.n_repeats},
                  {"mean_photons_dark", e.readout.mean_photons_dark},
                  {"mean_photons_bright", e.readout.mean_photons_bright},
                  {"per_repeat_dark", e.readout.mean_photons_dark / e.readout.n_repeats},
                  {"per_repeat_bright", e.readout.mean_photons_bright / e.readout.n_repeats},
                  {"threshold", e.readout.threshold},
                  {"f_assign_dark", fid.f_assign_dark},
                  {"f_assign_bright", fid.f_assign_bright},
                  {"f_squared", fid.f_squared}};
  j["charge"] = {{"threshold", e.resolved_charge_threshold()},
                 {"reset_steady_state_nv_minus", reset.steady_state_nv_minus()},
                 {"orange_ionization_rate", orange.ionization},
                 {"orange_mean_nv_minus_dwell", orange.ionization > 0.0 ? 1.0 / orange.ionization : 0.0},
                 {"acceptance", model.acceptance},
                 {"p_nv_minus_given_accept", model.p_nv_minus_given_accept}};
  j["baseline_shift"] = e.baseline_shift;
  j["shot_model"] = {{"offset", model.offset}, {"slope", model.slope}};
  j["red_dot"] = {{"t", dot.t}, {"omega_t", dot.t * e.rabi.omega}, {"b", dot.b}, {"q_t", dot.q_t},
                  {"q_2t", dot.q_2t}};
  return j;
}

}  // namespace tbi::cli
