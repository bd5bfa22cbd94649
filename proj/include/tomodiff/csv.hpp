#pragma once

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tomodiff/error.hpp"
#include "tomodiff/nn.hpp"

namespace tomodiff::csv {

struct Table {
  std::vector<std::string> header;  // empty when the file has no header row
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

inline std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> SplitFields(std::string_view line, char sep = ',') {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    fields.push_back(Trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline std::optional<double> ParseDouble(std::string_view field) {
  if (field.empty()) return std::nullopt;
  const std::string copy(field);
  char* end = nullptr;
  errno = 0;
  const double value = std::strtod(copy.c_str(), &end);
  if (end != copy.c_str() + copy.size()) return std::nullopt;
  // ERANGE also flags underflow to a subnormal or zero, which is still a value.
  if (errno == ERANGE && std::abs(value) >= 1.0) return std::nullopt;
  return value;
}

// Reads a numeric comma-separated table. A first row containing any
// non-numeric field is taken as the header. Blank lines and lines starting
// with '#' are skipped.
inline Table ReadNumeric(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  Table table;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = Trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto fields = SplitFields(trimmed);
    std::vector<double> row;
    row.reserve(fields.size());
    bool numeric = true;
    for (const auto field : fields) {
      const auto value = ParseDouble(field);
      if (!value) {
        numeric = false;
        break;
      }
      row.push_back(*value);
    }
    if (!numeric) {
      if (first) {
        for (const auto field : fields) table.header.emplace_back(field);
        first = false;
        continue;
      }
      throw ParseError("'" + path + "' row " + std::to_string(table.rows.size()) + " (line " +
                       std::to_string(line_no) + "): non-numeric field");
    }
    first = false;
    table.rows.push_back(std::move(row));
    table.line_numbers.push_back(line_no);
  }
  return table;
}

// Converts table rows into a dense matrix, requiring a uniform row width.
inline Matrix ToMatrix(const Table& table, std::optional<std::size_t> expected_width,
                       const std::string& what) {
  const std::size_t width =
      expected_width ? *expected_width : (table.rows.empty() ? 0 : table.rows.front().size());
  Matrix out(static_cast<Index>(table.rows.size()), static_cast<Index>(width));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.rows[r].size() != width) {
      throw ParseError(what + ": row " + std::to_string(r) + " has " +
                       std::to_string(table.rows[r].size()) + " fields, expected " +
                       std::to_string(width));
    }
    for (std::size_t c = 0; c < width; ++c) out(static_cast<Index>(r), static_cast<Index>(c)) = table.rows[r][c];
  }
  return out;
}

// Round-trippable decimal formatting.
inline std::string FormatDouble(double v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return os.str();
}

inline void WriteMatrix(const std::string& path, const Matrix& m,
                        const std::vector<std::string>& header = {}) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  if (!header.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "," : "") << header[i];
    out << '\n';
  }
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) out << (c ? "," : "") << FormatDouble(m(r, c));
    out << '\n';
  }
  if (!out) throw IoError("failed writing '" + path + "'");
}

}  // namespace tomodiff::csv
