#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tir_ipw/errors.hpp"

namespace tir_ipw::csv {

/// Shortest text that parses back to exactly the same double.
inline std::string format(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line, char sep = ',') {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto end = line.find(sep, start);
    if (end == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, end - start)));
    start = end + 1;
  }
}

/// Parses a number; "nan"/"inf" are accepted so callers can reject them with context.
inline bool parse_double(std::string_view s, double& out) {
  if (s == "nan" || s == "NaN" || s == "NA" || s.empty()) {
    out = std::nan("");
    return !s.empty();
  }
  if (s == "inf" || s == "Inf") {
    out = HUGE_VAL;
    return true;
  }
  if (s == "-inf" || s == "-Inf") {
    out = -HUGE_VAL;
    return true;
  }
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
};

inline Table read(std::istream& in, const std::string& source = "<stream>") {
  Table t;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (lineno == 1 && v.size() >= 3 && static_cast<unsigned char>(v[0]) == 0xEF) {
      v.remove_prefix(3);  // UTF-8 BOM
    }
    if (v.empty()) continue;
    auto fields = split(v);
    if (!have_header) {
      for (auto f : fields) t.header.emplace_back(f);
      have_header = true;
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw InputError(source + ":" + std::to_string(lineno) + ": expected " +
                       std::to_string(t.header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    }
    std::vector<std::string> row;
    row.reserve(fields.size());
    for (auto f : fields) row.emplace_back(f);
    t.rows.push_back(std::move(row));
    t.line_numbers.push_back(lineno);
  }
  if (!have_header) throw InputError(source + ": empty file");
  return t;
}

inline Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  return read(in, path);
}

inline void expect_header(const Table& t, const std::vector<std::string>& expected,
                          const std::string& source) {
  if (t.header.size() < expected.size()) {
    throw InputError(source + ": header must start with " + expected.front());
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (t.header[i] != expected[i]) {
      throw InputError(source + ": expected column '" + expected[i] + "' but found '" +
                       t.header[i] + "'");
    }
  }
}

}  // namespace tir_ipw::csv
