#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tan/diffcore/array.hpp"
#include "tan/errors.hpp"

namespace tanflow {

struct DelimitedOptions {
  char delimiter = ',';
  bool header = false;                             // skip the first non-empty line
  std::optional<std::vector<std::size_t>> columns;  // keep only these columns, in this order
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_real(std::string_view text, std::string_view where) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ParseError(std::string(where) + ": non-numeric value \"" + std::string(text) + "\"");
  }
  if (!std::isfinite(v)) throw ParseError(std::string(where) + ": non-finite value \"" + std::string(text) + "\"");
  return v;
}

/// Reads a numeric matrix. Empty lines are skipped; every row must have the
/// same number of fields.
inline Array load_delimited(const std::filesystem::path& path, const DelimitedOptions& opt = {}) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  std::vector<double> values;
  std::size_t cols = 0, rows = 0, line_no = 0;
  bool header_pending = opt.header;
  std::string line;
  std::vector<double> fields;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    fields.clear();
    std::size_t start = 0;
    for (std::size_t col = 1;; ++col) {
      const std::size_t end = line.find(opt.delimiter, start);
      const std::string_view cell = std::string_view(line).substr(start, end == std::string::npos ? end : end - start);
      fields.push_back(parse_real(cell, path.string() + " row " + std::to_string(line_no) + " column " +
                                            std::to_string(col)));
      if (end == std::string::npos) break;
      start = end + 1;
    }
    if (rows == 0) {
      cols = fields.size();
    } else if (fields.size() != cols) {
      throw FormatError(path.string() + " row " + std::to_string(line_no) + ": " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(cols));
    }
    if (opt.columns) {
      for (std::size_t c : *opt.columns) {
        if (c >= cols) throw ContractViolation(path.string() + ": column " + std::to_string(c) + " out of range");
        values.push_back(fields[c]);
      }
    } else {
      values.insert(values.end(), fields.begin(), fields.end());
    }
    ++rows;
  }
  const std::size_t width = opt.columns ? opt.columns->size() : cols;
  return Array(Shape{rows, width}, std::move(values));
}

/// Writes a matrix with shortest round-trip formatting.
inline void export_delimited(const Array& a, const std::filesystem::path& path, char delimiter = ',') {
  if (a.rank() != 2) throw ContractViolation("export_delimited expects a matrix");
  std::string out;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) {
      if (c) out.push_back(delimiter);
      out += format_real(a(r, c));
    }
    out.push_back('\n');
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << out;
}

}  // namespace tanflow
