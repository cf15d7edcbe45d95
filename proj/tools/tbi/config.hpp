#pragma once

#include "tbi/protocol.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace tbi::cli {

enum class GridUnits { OmegaT, Seconds };

/// Either explicit values or an inclusive linspace; stored in seconds after
/// resolution.
struct GridSpec {
  std::vector<double> values;
  GridUnits units = GridUnits::OmegaT;
};

struct BellCurveSpec {
  GridSpec grid;
  double damped_gamma_phi = 0.0;
  double damped_gamma_1 = 0.0;
};

struct CriticalNoiseSpec {
  double omega = 1.0;
  double tol = 1e-9;
};

struct RabiScanSpec {
  GridSpec grid;
  std::size_t shots_per_point = 20000;
  bool fit_decay = false;
};

struct TbiPointSpec {
  std::optional<double> t;  // s; the red-dot time of the expected curve when unset
  std::optional<std::size_t> shots_t;
  std::optional<std::size_t> shots_2t;
  double target_stderr = 0.0039;
  double k_sigma = 3.0;
  bool write_shots = true;
};

struct TraceSpec {
  double duration = 120.0;
  double bin_width = 0.01;
  /// Charge-test illumination of the experiment unless "illumination" is
  /// "green", which selects the reset illumination; "power" overrides.
  photophysics::IlluminationSetting setting = photophysics::IlluminationSetting::orange_default();
};

struct HistogramSpec {
  std::size_t shots = 100000;
  std::int64_t bin_width = 1;
};

struct DwellSpec {
  std::optional<std::int64_t> threshold;
  int debounce = 3;
};

struct RunConfig {
  std::uint64_t master_seed = 1;
  unsigned workers = 1;
  std::string output_dir = ".";
  std::string preset = "paper";
  double target_bell_min = -0.209;
  protocol::ExperimentConfig experiment;
  BellCurveSpec bell_curve;
  CriticalNoiseSpec critical_noise;
  RabiScanSpec rabi_scan;
  TbiPointSpec tbi_point;
  TraceSpec trace;
  HistogramSpec histogram;
  HistogramSpec charge_histogram;
  DwellSpec dwell_times;

  /// Fully resolved configuration (everything except workers and
  /// output_dir), used for the config hash.
  nlohmann::json resolved;
  std::uint64_t config_hash = 0;
};

/// Strict parse: unknown keys, wrong types and out-of-range values throw
/// Error(ErrorCode::Config) naming the offending path. Validation finishes
/// before any simulation starts. Empty grids throw GridEmpty.
RunConfig parse_run_config(const nlohmann::json& document);
RunConfig load_run_config(const std::string& path);

/// Re-derives `resolved` and `config_hash`; call after CLI overrides.
void finalize(RunConfig& config);

nlohmann::json to_json(const protocol::ExperimentConfig& experiment);

std::string hex64(std::uint64_t v);

}  // namespace tbi::cli
