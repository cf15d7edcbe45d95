#pragma once

#include "config.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tbi::cli {

enum class TableFormat { Csv, Json };

struct CliOptions {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  std::optional<std::string> out;
  TableFormat format = TableFormat::Csv;
  std::optional<std::string> input;
};

/// Loads the config file (or the defaults), applies the command-line
/// overrides and recomputes the config hash.
RunConfig resolve_config(const CliOptions& options);

/// Writes tables and summaries into one directory. Every table carries a
/// metadata comment with the config hash and the master seed.
class OutputSink {
 public:
  OutputSink(const RunConfig& config, std::string command, TableFormat format);

  const std::filesystem::path& directory() const { return dir_; }
  void table(const std::string& stem, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows);
  void summary(const std::string& stem, const nlohmann::ordered_json& body);
  const std::vector<std::string>& written() const { return written_; }

 private:
  void commit(const std::filesystem::path& path, const std::string& content);

  std::filesystem::path dir_;
  std::string command_;
  TableFormat format_;
  std::string hash_;
  std::uint64_t seed_;
  std::vector<std::string> written_;
};

/// Every command returns the summary document it wrote.
nlohmann::ordered_json cmd_bell_curve(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_critical_noise(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_simulate_rabi_scan(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_simulate_tbi_point(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_simulate_trace(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_simulate_histogram(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_simulate_charge_histogram(const RunConfig& config, OutputSink& sink);
nlohmann::ordered_json cmd_fit_cosine(const RunConfig& config, const std::string& input, OutputSink& sink);
nlohmann::ordered_json cmd_fit_mixture(const RunConfig& config, const std::string& input, OutputSink& sink);
nlohmann::ordered_json cmd_dwell_times(const RunConfig& config, const std::optional<std::string>& input,
                                       OutputSink& sink);
nlohmann::ordered_json cmd_calibrate(const RunConfig& config);

}  // namespace tbi::cli
