#include "config.hpp"

#include "tbi/error.hpp"
#include "tbi/rng.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace tbi::cli {

namespace {

using nlohmann::json;

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorCode::Config, path + ": " + what);
}

// Strict view of one JSON object: every key must be consumed before finish().
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_error(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::optional<double> number(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_number()) config_error(at(key), "expected a number");
    const double d = v->get<double>();
    if (!std::isfinite(d)) config_error(at(key), "must be finite");
    return d;
  }

  std::optional<std::int64_t> integer(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_number_integer()) config_error(at(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  std::optional<std::uint64_t> unsigned_integer(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer() && v->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v->get<std::int64_t>());
    config_error(at(key), "expected a non-negative integer");
  }

  std::optional<bool> boolean(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_boolean()) config_error(at(key), "expected true or false");
    return v->get<bool>();
  }

  std::optional<std::string> string(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_string()) config_error(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<std::vector<double>> numbers(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    if (!v->is_array()) config_error(at(key), "expected an array of numbers");
    std::vector<double> out;
    for (const auto& e : *v) {
      if (!e.is_number()) config_error(at(key), "expected an array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::optional<Section> child(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    return Section(*v, at(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) config_error(at(it.key()), "unknown key");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json* take(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

void require(bool ok, const std::string& path, const std::string& what) {
  if (!ok) config_error(path, what);
}

readout::ThresholdObjective parse_objective(const std::string& s, const std::string& path) {
  if (s == "balanced") return readout::ThresholdObjective::Balanced;
  if (s == "one_sided_bright") return readout::ThresholdObjective::OneSidedBright;
  if (s == "one_sided_dark") return readout::ThresholdObjective::OneSidedDark;
  config_error(path, "expected balanced, one_sided_bright or one_sided_dark");
}

std::string objective_name(readout::ThresholdObjective o) {
  switch (o) {
    case readout::ThresholdObjective::Balanced: return "balanced";
    case readout::ThresholdObjective::OneSidedBright: return "one_sided_bright";
    case readout::ThresholdObjective::OneSidedDark: return "one_sided_dark";
  }
  return "balanced";
}

GridSpec parse_grid(Section s, double omega, GridSpec fallback) {
  GridSpec g = fallback;
  std::vector<double> values;
  if (auto units = s.string("units")) {
    if (*units == "omega_t")
      g.units = GridUnits::OmegaT;
    else if (*units == "seconds")
      g.units = GridUnits::Seconds;
    else
      config_error(s.at("units"), "expected omega_t or seconds");
  }
  const bool has_values = s.has("values");
  const bool has_range = s.has("start") || s.has("stop") || s.has("points");
  require(!(has_values && has_range), s.at("values"), "give either values or start/stop/points, not both");
  if (has_values) {
    values = *s.numbers("values");
  } else {
    const double start = s.number("start").value_or(0.0);
    const double stop = s.number("stop").value_or(2.0 * std::numbers::pi);
    const auto points = s.integer("points").value_or(200);
    require(points >= 0, s.at("points"), "must be >= 0");
    for (std::int64_t i = 0; i < points; ++i)
      values.push_back(points == 1 ? start : start + (stop - start) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  s.finish();
  if (values.empty()) throw Error(ErrorCode::GridEmpty, s.at("values") + ": grid is empty");
  double prev = 0.0;
  for (double v : values) {
    require(std::isfinite(v) && v >= 0.0, s.at("values"), "grid values must be finite and >= 0");
    require(v >= prev, s.at("values"), "grid must be sorted ascending");
    prev = v;
  }
  if (g.units == GridUnits::OmegaT)
    for (double& v : values) v /= omega;
  g.values = std::move(values);
  return g;
}

GridSpec default_grid(double omega, double stop_omega_t, std::size_t points, bool skip_zero) {
  GridSpec g;
  for (std::size_t i = 0; i < points; ++i) {
    const double x = skip_zero ? stop_omega_t * static_cast<double>(i + 1) / static_cast<double>(points)
                               : stop_omega_t * static_cast<double>(i) / static_cast<double>(points - 1);
    g.values.push_back(x / omega);
  }
  return g;
}

void parse_illumination(Section s, photophysics::IlluminationSetting& il) {
  if (auto v = s.number("power")) il.power = *v;
  if (auto v = s.number("wavelength_nm")) il.wavelength_nm = *v;
  s.finish();
}

void parse_coefficients(Section s, photophysics::ChargeCoefficients& c) {
  if (auto v = s.number("ionization_coeff")) c.ionization_coeff = *v;
  if (auto v = s.number("recombination_coeff")) c.recombination_coeff = *v;
  s.finish();
}

void parse_experiment(Section s, RunConfig& rc) {
  const std::string preset = s.string("preset").value_or("paper");
  require(preset == "paper" || preset == "ideal", s.at("preset"), "expected paper or ideal");
  rc.preset = preset;

  dynamics::RabiParams rabi{2.0 * std::numbers::pi * 1e4, 0.0, 0.0};
  if (auto r = s.child("rabi")) {
    if (auto v = r->number("omega")) rabi.omega = *v;
    if (auto v = r->number("gamma_phi")) rabi.gamma_phi = *v;
    if (auto v = r->number("gamma_1")) rabi.gamma_1 = *v;
    r->finish();
  }
  try {
    rabi.validate();
  } catch (const Error& e) {
    config_error(s.at("rabi"), e.what());
  }

  protocol::ExperimentConfig e =
      preset == "ideal" ? protocol::ExperimentConfig::ideal(rabi) : protocol::ExperimentConfig{};
  e.rabi = rabi;

  double target_f2 = 0.91, ratio = 3.0;
  auto definition = readout::FidelityDefinition::ClassProduct;
  std::optional<double> mean_dark, mean_bright, flip;
  std::optional<std::int64_t> threshold;
  if (auto r = s.child("readout")) {
    if (auto v = r->integer("n_repeats")) {
      require(*v >= 1, r->at("n_repeats"), "must be >= 1");
      e.readout.n_repeats = static_cast<int>(*v);
    }
    mean_bright = r->number("mean_photons_bright");
    mean_dark = r->number("mean_photons_dark");
    flip = r->number("flip_prob_per_repeat");
    threshold = r->integer("threshold");
    if (auto v = r->number("target_f_squared")) target_f2 = *v;
    if (auto v = r->number("ratio")) ratio = *v;
    if (auto v = r->string("fidelity_definition")) {
      if (*v == "class_product")
        definition = readout::FidelityDefinition::ClassProduct;
      else if (*v == "prior_weighted_squared")
        definition = readout::FidelityDefinition::PriorWeightedSquared;
      else
        config_error(r->at("fidelity_definition"), "expected class_product or prior_weighted_squared");
    }
    r->finish();
  }
  if (preset == "paper") {
    e.readout.flip_prob_per_repeat = 1e-6;
    if (!mean_dark && !mean_bright) {
      try {
        const auto cal = readout::calibrate_photon_rates(target_f2, e.readout.n_repeats, ratio, 0.5, definition);
        e.readout.mean_photons_dark = cal.mean_photons_dark;
        e.readout.mean_photons_bright = cal.mean_photons_bright;
        e.readout.threshold = cal.threshold;
      } catch (const Error& err) {
        config_error(s.at("readout"), err.what());
      }
    }
  }
  if (flip) e.readout.flip_prob_per_repeat = *flip;
  if (mean_dark) e.readout.mean_photons_dark = *mean_dark;
  if (mean_bright) e.readout.mean_photons_bright = *mean_bright;
  if (threshold) {
    e.readout.threshold = *threshold;
  } else if (mean_dark || mean_bright) {
    try {
      e.readout.threshold = readout::optimal_threshold(e.readout.mean_photons_dark, e.readout.mean_photons_bright, 0.5,
                                                       readout::ThresholdObjective::Balanced);
    } catch (const Error& err) {
      config_error(s.at("readout"), err.what());
    }
  }

  if (auto p = s.child("photophysics")) {
    if (auto g = p->child("green")) parse_coefficients(*g, e.photophysics.green);
    if (auto o = p->child("orange")) parse_coefficients(*o, e.photophysics.orange);
    if (auto v = p->number("bright_rate")) e.photophysics.bright_rate = *v;
    if (auto v = p->number("dark_rate")) e.photophysics.dark_rate = *v;
    if (auto v = p->number("reference_power")) e.photophysics.reference_power = *v;
    p->finish();
  }
  if (auto c = s.child("charge_illumination")) parse_illumination(*c, e.charge_illumination);
  if (auto c = s.child("reset_illumination")) parse_illumination(*c, e.reset_illumination);
  if (auto v = s.number("charge_pulse")) e.charge_pulse = *v;
  if (auto v = s.string("charge_threshold_objective"))
    e.charge_threshold_objective = parse_objective(*v, s.at("charge_threshold_objective"));
  if (auto v = s.number("charge_min_acceptance")) e.charge_min_acceptance = *v;
  if (auto v = s.integer("charge_threshold")) e.charge_threshold = *v;
  if (auto v = s.integer("batch_size")) {
    require(*v >= 1, s.at("batch_size"), "must be >= 1");
    e.batch_size = static_cast<int>(*v);
  }
  if (auto v = s.string("init_policy")) {
    if (*v == "symmetric")
      e.init_policy = protocol::InitPolicy::Symmetric;
    else if (*v == "discard_non_target")
      e.init_policy = protocol::InitPolicy::DiscardNonTarget;
    else
      config_error(s.at("init_policy"), "expected symmetric or discard_non_target");
  }
  if (auto v = s.number("prior_plus1")) e.prior_plus1 = *v;
  const auto shift = s.number("baseline_shift");
  if (auto v = s.number("target_bell_min")) rc.target_bell_min = *v;
  s.finish();

  try {
    if (shift) {
      e.baseline_shift = *shift;
    } else if (preset == "paper") {
      e.validate();
      e.baseline_shift = protocol::tune_baseline_shift(e, rc.target_bell_min);
    }
    e.validate();
    (void)e.resolved_charge_threshold();
  } catch (const Error& err) {
    config_error("experiment", err.what());
  }
  rc.experiment = e;
}

}  // namespace

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << v;
  return os.str();
}

nlohmann::json to_json(const protocol::ExperimentConfig& e) {
  json j;
  j["rabi"] = {{"omega", e.rabi.omega}, {"gamma_phi", e.rabi.gamma_phi}, {"gamma_1", e.rabi.gamma_1}};
  j["readout"] = {{"n_repeats", e.readout.n_repeats},
                  {"mean_photons_bright", e.readout.mean_photons_bright},
                  {"mean_photons_dark", e.readout.mean_photons_dark},
                  {"flip_prob_per_repeat", e.readout.flip_prob_per_repeat},
                  {"threshold", e.readout.threshold}};
  auto coeff = [](const photophysics::ChargeCoefficients& c) {
    return json{{"ionization_coeff", c.ionization_coeff}, {"recombination_coeff", c.recombination_coeff}};
  };
  j["photophysics"] = {{"green", coeff(e.photophysics.green)},
                       {"orange", coeff(e.photophysics.orange)},
                       {"bright_rate", e.photophysics.bright_rate},
                       {"dark_rate", e.photophysics.dark_rate},
                       {"reference_power", e.photophysics.reference_power}};
  j["charge_illumination"] = {{"power", e.charge_illumination.power},
                              {"wavelength_nm", e.charge_illumination.wavelength_nm}};
  j["reset_illumination"] = {{"power", e.reset_illumination.power},
                             {"wavelength_nm", e.reset_illumination.wavelength_nm}};
  j["charge_pulse"] = e.charge_pulse;
  j["charge_threshold_objective"] = objective_name(e.charge_threshold_objective);
  j["charge_min_acceptance"] = e.charge_min_acceptance;
  j["charge_threshold"] = e.resolved_charge_threshold();
  j["baseline_shift"] = e.baseline_shift;
  j["batch_size"] = e.batch_size;
  j["init_policy"] = e.init_policy == protocol::InitPolicy::Symmetric ? "symmetric" : "discard_non_target";
  j["prior_plus1"] = e.prior_plus1;
  return j;
}

void finalize(RunConfig& rc) {
  json r;
  r["master_seed"] = rc.master_seed;
  r["preset"] = rc.preset;
  r["experiment"] = to_json(rc.experiment);
  r["bell_curve"] = {{"grid_seconds", rc.bell_curve.grid.values},
                     {"damped_gamma_phi", rc.bell_curve.damped_gamma_phi},
                     {"damped_gamma_1", rc.bell_curve.damped_gamma_1}};
  r["critical_noise"] = {{"omega", rc.critical_noise.omega}, {"tol", rc.critical_noise.tol}};
  r["rabi_scan"] = {{"grid_seconds", rc.rabi_scan.grid.values},
                    {"shots_per_point", rc.rabi_scan.shots_per_point},
                    {"fit_decay", rc.rabi_scan.fit_decay}};
  json tp = {{"target_stderr", rc.tbi_point.target_stderr},
             {"k_sigma", rc.tbi_point.k_sigma},
             {"write_shots", rc.tbi_point.write_shots}};
  if (rc.tbi_point.t) tp["t"] = *rc.tbi_point.t;
  if (rc.tbi_point.shots_t) tp["shots_t"] = *rc.tbi_point.shots_t;
  if (rc.tbi_point.shots_2t) tp["shots_2t"] = *rc.tbi_point.shots_2t;
  r["tbi_point"] = tp;
  r["trace"] = {{"duration", rc.trace.duration},
                {"bin_width", rc.trace.bin_width},
                {"illumination", std::string(photophysics::to_string(rc.trace.setting.label))},
                {"power", rc.trace.setting.power},
                {"wavelength_nm", rc.trace.setting.wavelength_nm}};
  r["histogram"] = {{"shots", rc.histogram.shots}, {"bin_width", rc.histogram.bin_width}};
  r["charge_histogram"] = {{"shots", rc.charge_histogram.shots}, {"bin_width", rc.charge_histogram.bin_width}};
  json dw = {{"debounce", rc.dwell_times.debounce}};
  if (rc.dwell_times.threshold) dw["threshold"] = *rc.dwell_times.threshold;
  r["dwell_times"] = dw;
  rc.resolved = r;
  rc.config_hash = hash_label(r.dump());
}

RunConfig parse_run_config(const nlohmann::json& document) {
  RunConfig rc;
  Section root(document, "");
  if (auto v = root.unsigned_integer("master_seed")) rc.master_seed = *v;
  if (auto v = root.integer("workers")) {
    require(*v >= 1 && *v <= 1024, "workers", "must lie in [1, 1024]");
    rc.workers = static_cast<unsigned>(*v);
  }
  if (auto v = root.string("output_dir")) rc.output_dir = *v;

  if (auto e = root.child("experiment"))
    parse_experiment(*e, rc);
  else
    parse_experiment(Section(json::object(), "experiment"), rc);
  const double omega = rc.experiment.rabi.omega;

  rc.bell_curve.grid = default_grid(omega, 2.0 * std::numbers::pi, 10000, true);
  bool damped_given = false;
  if (auto s = root.child("bell_curve")) {
    if (auto g = s->child("grid")) rc.bell_curve.grid = parse_grid(*g, omega, {});
    if (auto d = s->child("damped")) {
      damped_given = true;
      if (auto v = d->number("gamma_phi")) rc.bell_curve.damped_gamma_phi = *v;
      if (auto v = d->number("gamma_1")) rc.bell_curve.damped_gamma_1 = *v;
      d->finish();
    }
    s->finish();
  }
  if (!damped_given) rc.bell_curve.damped_gamma_phi = 0.5 * std::sqrt(2.0) * omega;
  require(rc.bell_curve.damped_gamma_phi >= 0.0 && rc.bell_curve.damped_gamma_1 >= 0.0, "bell_curve.damped",
          "rates must be >= 0");

  rc.critical_noise.omega = omega;
  if (auto s = root.child("critical_noise")) {
    if (auto v = s->number("omega")) rc.critical_noise.omega = *v;
    if (auto v = s->number("tol")) rc.critical_noise.tol = *v;
    s->finish();
  }
  require(rc.critical_noise.omega > 0.0, "critical_noise.omega", "must be > 0");
  require(rc.critical_noise.tol > 0.0, "critical_noise.tol", "must be > 0");

  rc.rabi_scan.grid = default_grid(omega, 4.0 * std::numbers::pi, 41, false);
  if (auto s = root.child("rabi_scan")) {
    if (auto g = s->child("grid")) rc.rabi_scan.grid = parse_grid(*g, omega, {});
    if (auto v = s->integer("shots_per_point")) {
      require(*v >= 1, s->at("shots_per_point"), "must be >= 1");
      rc.rabi_scan.shots_per_point = static_cast<std::size_t>(*v);
    }
    if (auto v = s->boolean("fit_decay")) rc.rabi_scan.fit_decay = *v;
    s->finish();
  }
  require(rc.rabi_scan.shots_per_point >= 10 * static_cast<std::size_t>(rc.experiment.batch_size),
          "rabi_scan.shots_per_point", "must be >= 10 * experiment.batch_size");

  if (auto s = root.child("tbi_point")) {
    const auto t = s->number("t");
    const auto omega_t = s->number("omega_t");
    require(!(t && omega_t), s->at("t"), "give either t or omega_t, not both");
    if (t) rc.tbi_point.t = *t;
    if (omega_t) rc.tbi_point.t = *omega_t / omega;
    if (auto v = s->integer("shots_t")) {
      require(*v >= 1, s->at("shots_t"), "must be >= 1");
      rc.tbi_point.shots_t = static_cast<std::size_t>(*v);
    }
    if (auto v = s->integer("shots_2t")) {
      require(*v >= 1, s->at("shots_2t"), "must be >= 1");
      rc.tbi_point.shots_2t = static_cast<std::size_t>(*v);
    }
    if (auto v = s->number("target_stderr")) rc.tbi_point.target_stderr = *v;
    if (auto v = s->number("k_sigma")) rc.tbi_point.k_sigma = *v;
    if (auto v = s->boolean("write_shots")) rc.tbi_point.write_shots = *v;
    s->finish();
  }
  require(!rc.tbi_point.t || *rc.tbi_point.t >= 0.0, "tbi_point.t", "must be >= 0");
  require(rc.tbi_point.target_stderr > 0.0, "tbi_point.target_stderr", "must be > 0");
  require(rc.tbi_point.k_sigma >= 0.0, "tbi_point.k_sigma", "must be >= 0");

  rc.trace.setting = rc.experiment.charge_illumination;
  if (auto s = root.child("trace")) {
    if (auto v = s->number("duration")) rc.trace.duration = *v;
    if (auto v = s->number("bin_width")) rc.trace.bin_width = *v;
    if (auto v = s->string("illumination")) {
      if (*v == "green")
        rc.trace.setting = rc.experiment.reset_illumination;
      else if (*v != "orange")
        config_error(s->at("illumination"), "expected orange or green");
    }
    if (auto v = s->number("power")) rc.trace.setting.power = *v;
    s->finish();
  }
  require(rc.trace.duration > 0.0, "trace.duration", "must be > 0");
  require(rc.trace.bin_width > 0.0 && rc.trace.bin_width <= rc.trace.duration, "trace.bin_width",
          "must lie in (0, duration]");
  require(rc.trace.setting.power > 0.0, "trace.power", "must be > 0");

  auto parse_hist = [&](const char* key, HistogramSpec& h) {
    if (auto s = root.child(key)) {
      if (auto v = s->integer("shots")) {
        require(*v >= 1, s->at("shots"), "must be >= 1");
        h.shots = static_cast<std::size_t>(*v);
      }
      if (auto v = s->integer("bin_width")) {
        require(*v >= 1, s->at("bin_width"), "must be >= 1");
        h.bin_width = *v;
      }
      s->finish();
    }
  };
  parse_hist("histogram", rc.histogram);
  parse_hist("charge_histogram", rc.charge_histogram);

  if (auto s = root.child("dwell_times")) {
    if (auto v = s->integer("threshold")) {
      require(*v >= 0, s->at("threshold"), "must be >= 0");
      rc.dwell_times.threshold = *v;
    }
    if (auto v = s->integer("debounce")) {
      require(*v >= 1, s->at("debounce"), "must be >= 1");
      rc.dwell_times.debounce = static_cast<int>(*v);
    }
    s->finish();
  }
  root.finish();
  finalize(rc);
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Config, path + ": invalid JSON: " + e.what());
  }
  return parse_run_config(doc);
}

}  // namespace tbi::cli
