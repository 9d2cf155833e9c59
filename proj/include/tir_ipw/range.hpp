#pragma once

#include <charconv>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tir_ipw/errors.hpp"

namespace tir_ipw {

/// Glycemic interval G with explicit boundary inclusion.
struct TargetRange {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
  bool lower_inclusive = false;
  bool upper_inclusive = false;

  TargetRange() = default;
  TargetRange(double lo, double hi, bool lo_incl, bool hi_incl)
      : lower(lo), upper(hi), lower_inclusive(lo_incl), upper_inclusive(hi_incl) {
    if (std::isnan(lo) || std::isnan(hi) || !(lo < hi)) {
      throw InputError("target range needs lower < upper");
    }
  }

  bool contains(double y) const {
    const bool above = lower_inclusive ? y >= lower : y > lower;
    const bool below = upper_inclusive ? y <= upper : y < upper;
    return above && below;
  }

  /// Interval notation, e.g. "[70,180]" or "(180,inf)".
  std::string label() const {
    std::ostringstream os;
    os << (lower_inclusive ? '[' : '(') << bound(lower) << ',' << bound(upper)
       << (upper_inclusive ? ']' : ')');
    return os.str();
  }

  friend bool operator==(const TargetRange&, const TargetRange&) = default;

 private:
  static std::string bound(double v) {
    if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
    std::ostringstream os;
    os << v;
    return os.str();
  }
};

/// Indicator I(y in G) as 0/1.
inline int in_range(double y, const TargetRange& g) { return g.contains(y) ? 1 : 0; }

namespace ranges {

/// Below 70 mg/dL. Open at -inf so the three standard ranges partition every finite value.
inline TargetRange hypo() {
  return {-std::numeric_limits<double>::infinity(), 70.0, false, false};
}
inline TargetRange in_target() { return {70.0, 180.0, true, true}; }
inline TargetRange tight_target() { return {70.0, 140.0, true, true}; }
inline TargetRange hyper() { return {180.0, std::numeric_limits<double>::infinity(), false, false}; }
inline TargetRange above140() {
  return {140.0, std::numeric_limits<double>::infinity(), false, false};
}
inline TargetRange above250() {
  return {250.0, std::numeric_limits<double>::infinity(), false, false};
}

/// hypo, in-range, hyper.
inline std::vector<TargetRange> standard3() { return {hypo(), in_target(), hyper()}; }

/// The six ranges used for inpatient reporting.
inline std::vector<TargetRange> inpatient6() {
  return {hypo(), in_target(), tight_target(), hyper(), above140(), above250()};
}

inline double parse_bound(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s == "inf" || s == "+inf" || s == "Inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf" || s == "-Inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("bad range bound '" + std::string(s) + "'");
  }
  return v;
}

/// Parses interval notation "(a,b]" etc. Bounds may be "inf"/"-inf".
inline TargetRange parse(std::string_view text) {
  if (text.size() < 5) throw InputError("bad range '" + std::string(text) + "'");
  const char open = text.front();
  const char close = text.back();
  if ((open != '(' && open != '[') || (close != ')' && close != ']')) {
    throw InputError("range must look like (a,b), [a,b], (a,b] or [a,b): '" +
                     std::string(text) + "'");
  }
  const auto body = text.substr(1, text.size() - 2);
  const auto comma = body.find(',');
  if (comma == std::string_view::npos) {
    throw InputError("range missing comma: '" + std::string(text) + "'");
  }
  return {parse_bound(body.substr(0, comma)), parse_bound(body.substr(comma + 1)), open == '[',
          close == ']'};
}

/// Parses a ';'-separated list of intervals or a preset name (inpatient6, standard3).
inline std::vector<TargetRange> parse_list(std::string_view text) {
  if (text == "inpatient6") return inpatient6();
  if (text == "standard3") return standard3();
  std::vector<TargetRange> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find(';', start);
    if (end == std::string_view::npos) end = text.size();
    auto item = text.substr(start, end - start);
    if (!item.empty()) out.push_back(parse(item));
    start = end + 1;
  }
  if (out.empty()) throw InputError("no target ranges given");
  return out;
}

}  // namespace ranges
}  // namespace tir_ipw
