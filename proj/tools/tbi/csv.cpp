#include "csv.hpp"

#include "tbi/error.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace tbi::cli {

namespace {

[[noreturn]] void malformed(std::size_t line, std::size_t column, const std::string& what) {
  throw Error(ErrorCode::MalformedCsv,
              "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = b == std::string::npos ? std::string() : f.substr(b, e - b + 1);
  }
  return out;
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_csv(std::ostream& out, const CsvTable& table) {
  for (const auto& c : table.comments) out << '#' << c << '\n';
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << row[i];
    out << '\n';
  };
  emit(table.header);
  for (const auto& row : table.rows) emit(row);
}

CsvTable read_csv(std::istream& in) {
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      table.comments.push_back(line.substr(1));
      continue;
    }
    auto fields = split(line);
    for (std::size_t c = 0; c < fields.size(); ++c)
      if (fields[c].empty()) malformed(line_no, c + 1, "empty field");
    if (!have_header) {
      table.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != table.header.size())
      malformed(line_no, std::min(fields.size(), table.header.size()) + 1,
                "expected " + std::to_string(table.header.size()) + " fields, found " +
                    std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.row_lines.push_back(line_no);
  }
  if (!have_header) malformed(line_no + 1, 1, "missing header row");
  return table;
}

CsvTable read_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open input file " + path);
  try {
    return read_csv(in);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

CsvColumns::CsvColumns(const CsvTable& table) : table_(table) {
  if (table.row_lines.size() != table.rows.size())
    throw Error(ErrorCode::MalformedCsv, "row bookkeeping mismatch");
  for (std::size_t i = 0; i < table.header.size(); ++i) index_[table.header[i]] = i;
}

std::size_t CsvColumns::line_of(std::size_t row) const { return table_.row_lines[row]; }

std::size_t CsvColumns::column(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorCode::MalformedCsv, "missing column '" + name + "'");
  return it->second;
}

std::vector<double> CsvColumns::doubles(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<double> out;
  out.reserve(table_.rows.size());
  for (std::size_t r = 0; r < table_.rows.size(); ++r) {
    const std::string& cell = table_.rows[r][c];
    double v = 0.0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
      malformed(line_of(r), c + 1, "'" + cell + "' is not a number");
    out.push_back(v);
  }
  return out;
}

std::vector<std::int64_t> CsvColumns::integers(const std::string& name) const {
  const std::size_t c = column(name);
  std::vector<std::int64_t> out;
  out.reserve(table_.rows.size());
  for (std::size_t r = 0; r < table_.rows.size(); ++r) {
    const std::string& cell = table_.rows[r][c];
    std::int64_t v = 0;
    const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (res.ec != std::errc() || res.ptr != cell.data() + cell.size())
      malformed(line_of(r), c + 1, "'" + cell + "' is not an integer");
    out.push_back(v);
  }
  return out;
}

}  // namespace tbi::cli
