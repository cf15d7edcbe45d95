#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace tbi::cli {

/// Comma-separated table with '#' metadata lines and one header row.
struct CsvTable {
  std::vector<std::string> comments;  // without the leading '#'
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> row_lines;  // 1-based source line of each row
};

/// Shortest round-trip decimal representation.
std::string format_number(double v);

void write_csv(std::ostream& out, const CsvTable& table);

/// Throws Error(MalformedCsv) naming the 1-based line and column of the
/// first problem: ragged rows, empty fields, missing header.
CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

/// Numeric view of the named columns; a non-numeric cell throws
/// Error(MalformedCsv) with its line and column.
class CsvColumns {
 public:
  explicit CsvColumns(const CsvTable& table);

  bool has(const std::string& name) const { return index_.count(name) != 0; }
  std::vector<double> doubles(const std::string& name) const;
  std::vector<std::int64_t> integers(const std::string& name) const;

 private:
  std::size_t column(const std::string& name) const;
  std::size_t line_of(std::size_t row) const;

  const CsvTable& table_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace tbi::cli
