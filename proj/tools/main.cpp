#include "tbi/commands.hpp"

#include "tbi/error.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <map>
#include <string>

namespace {

int report_error(std::string_view code, const std::string& message, int exit_code) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", std::string(code)}, {"message", message}};
  std::cerr << j.dump() << std::endl;
  return exit_code;
}

void add_common(CLI::App* cmd, tbi::cli::CliOptions& o) {
  cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "master seed (overrides the config)");
  cmd->add_option("--workers", o.workers, "worker threads (results do not depend on it)");
  cmd->add_option("--out", o.out, "output directory (overrides the config)");
  cmd->add_option("--format", o.format, "table format")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, tbi::cli::TableFormat>{{"csv", tbi::cli::TableFormat::Csv},
                                                       {"json", tbi::cli::TableFormat::Json}},
          CLI::ignore_case));
}

}  // namespace

int main(int argc, char** argv) {
  using namespace tbi::cli;
  CLI::App app{"Temporal Bell inequality simulator for a single nuclear spin"};
  app.require_subcommand(1);
  CliOptions o;

  auto* bell = app.add_subcommand("bell-curve", "B(t) for the ideal and a damped Rabi oscillation");
  auto* crit = app.add_subcommand("critical-noise", "noise rate above which no violation remains");
  auto* sim = app.add_subcommand("simulate", "Monte Carlo simulation of the measurement sequence");
  sim->require_subcommand(1);
  auto* rabi = sim->add_subcommand("rabi-scan", "Q(0, tau) over a tau grid");
  auto* point = sim->add_subcommand("tbi-point", "Q(0, t), Q(0, 2t) and B at one time");
  auto* trace = sim->add_subcommand("trace", "charge-state fluorescence time trace");
  auto* hist = sim->add_subcommand("histogram", "nuclear-spin readout photon histogram");
  auto* chist = sim->add_subcommand("charge-histogram", "charge-test photon histogram after a green reset");
  auto* fit = app.add_subcommand("fit", "fit a model to a CSV file");
  fit->require_subcommand(1);
  auto* fit_cos = fit->add_subcommand("cosine", "damped or undamped cosine fit of a Rabi scan");
  auto* fit_mix = fit->add_subcommand("mixture", "two-component Poisson mixture fit");
  auto* dwell = app.add_subcommand("dwell-times", "dwell times from a thresholded fluorescence trace");
  auto* cal = app.add_subcommand("calibrate", "print the resolved readout and charge calibration");

  for (auto* c : {bell, crit, rabi, point, trace, hist, chist, fit_cos, fit_mix, dwell, cal}) add_common(c, o);
  fit_cos->add_option("--input", o.input, "CSV with columns tau, q[, std_error]")->required();
  fit_mix->add_option("--input", o.input, "CSV with bin_lo, bin_hi, count or a count column")->required();
  dwell->add_option("--input", o.input, "trace CSV with bin_start_s, count; simulated when absent");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("USAGE", e.what(), 64);
  }

  try {
    const RunConfig config = resolve_config(o);
    nlohmann::ordered_json summary;
    if (cal->parsed()) {
      std::cout << cmd_calibrate(config).dump(2) << std::endl;
      return 0;
    }
    auto run = [&](const char* name, auto&& fn) {
      OutputSink sink(config, name, o.format);
      summary = fn(sink);
    };
    if (bell->parsed())
      run("bell-curve", [&](OutputSink& s) { return cmd_bell_curve(config, s); });
    else if (crit->parsed())
      run("critical-noise", [&](OutputSink& s) { return cmd_critical_noise(config, s); });
    else if (rabi->parsed())
      run("simulate/rabi-scan", [&](OutputSink& s) { return cmd_simulate_rabi_scan(config, s); });
    else if (point->parsed())
      run("simulate/tbi-point", [&](OutputSink& s) { return cmd_simulate_tbi_point(config, s); });
    else if (trace->parsed())
      run("simulate/trace", [&](OutputSink& s) { return cmd_simulate_trace(config, s); });
    else if (hist->parsed())
      run("simulate/histogram", [&](OutputSink& s) { return cmd_simulate_histogram(config, s); });
    else if (chist->parsed())
      run("simulate/charge-histogram", [&](OutputSink& s) { return cmd_simulate_charge_histogram(config, s); });
    else if (fit_cos->parsed())
      run("fit/cosine", [&](OutputSink& s) { return cmd_fit_cosine(config, *o.input, s); });
    else if (fit_mix->parsed())
      run("fit/mixture", [&](OutputSink& s) { return cmd_fit_mixture(config, *o.input, s); });
    else if (dwell->parsed())
      run("dwell-times", [&](OutputSink& s) { return cmd_dwell_times(config, o.input, s); });
    std::cout << summary.dump(2) << std::endl;
    return 0;
  } catch (const tbi::Error& e) {
    return report_error(tbi::to_string(e.code()), e.what(), 2);
  } catch (const std::exception& e) {
    return report_error("INTERNAL", e.what(), 1);
  }
}
