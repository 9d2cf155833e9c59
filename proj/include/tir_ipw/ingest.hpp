#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/csv.hpp"
#include "tir_ipw/errors.hpp"
#include "tir_ipw/grid.hpp"

namespace tir_ipw {

struct Reading {
  std::string subject_id;
  double time_minutes = 0.0;
  double glucose_mgdl = 0.0;
};

struct IngestOptions {
  /// Subjects followed for less than this are dropped. Defaults to one grid step.
  std::optional<double> min_followup_minutes;
  std::string group_label = "group";
};

struct IngestResult {
  Cohort cohort;
  std::vector<std::string> diagnostics;
  std::size_t rejected_rows = 0;
  std::vector<std::string> rejected_subjects;
};

/// Snaps readings onto the grid and builds availability from follow-up durations (days).
///
/// A reading at time t lands in the interval [t_j, t_{j+1}) holding it; the
/// latest timestamp in an interval wins (input order breaks exact ties).
inline IngestResult ingest_readings(std::span<const Reading> rows, const TimeGrid& grid,
                                    const std::unordered_map<std::string, double>& followup_days,
                                    const IngestOptions& options = {}) {
  if (rows.empty()) throw InputError("no readings to ingest");
  const auto k = grid.size();
  const double min_followup = options.min_followup_minutes.value_or(grid.step());

  struct Slot {
    std::vector<double> glucose;
    std::vector<double> stamp;
    Mask seen;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Slot> slots;
  IngestResult result;
  std::size_t beyond = 0;

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (!(row.time_minutes >= 0.0) || !std::isfinite(row.time_minutes)) {
      throw InputError("row " + std::to_string(r + 1) + " (subject " + row.subject_id +
                       "): reading time must be a non-negative number of minutes");
    }
    if (followup_days.find(row.subject_id) == followup_days.end()) {
      throw InputError("subject " + row.subject_id + " has readings but no follow-up duration");
    }
    if (!std::isfinite(row.glucose_mgdl)) {
      ++result.rejected_rows;
      result.diagnostics.push_back("row " + std::to_string(r + 1) + " (subject " +
                                   row.subject_id + "): non-finite glucose rejected");
      continue;
    }
    auto it = slots.find(row.subject_id);
    if (it == slots.end()) {
      order.push_back(row.subject_id);
      it = slots.emplace(row.subject_id, Slot{std::vector<double>(k, kUndefined),
                                              std::vector<double>(k, -1.0), Mask(k, 0)})
               .first;
    }
    const auto j = grid.interval_index(row.time_minutes);
    if (j >= k) {
      ++beyond;
      continue;
    }
    auto& s = it->second;
    if (!s.seen[j] || row.time_minutes >= s.stamp[j]) {
      s.glucose[j] = row.glucose_mgdl;
      s.stamp[j] = row.time_minutes;
      s.seen[j] = 1;
    }
  }
  if (beyond > 0) {
    result.diagnostics.push_back(std::to_string(beyond) + " readings after the horizon ignored");
  }

  std::vector<Trajectory> trajectories;
  trajectories.reserve(order.size());
  for (const auto& id : order) {
    const double c = followup_days.at(id) * kMinutesPerDay;
    if (!(c >= min_followup) || std::isnan(c)) {
      result.rejected_subjects.push_back(id);
      result.diagnostics.push_back("subject " + id + ": follow-up " + csv::format(c) +
                                   " min below minimum " + csv::format(min_followup) +
                                   " min, excluded");
      continue;
    }
    auto& s = slots.at(id);
    trajectories.emplace_back(id, grid, std::move(s.glucose), std::move(s.seen), c);
  }
  if (trajectories.empty()) throw InputError("every subject was excluded during ingestion");
  result.cohort = Cohort(grid, std::move(trajectories), {}, options.group_label);
  return result;
}

/// Readings a cohort holds, one per grid interval with a reading (time = interval start).
inline std::vector<Reading> canonical_rows(const Cohort& cohort) {
  std::vector<Reading> out;
  const auto& grid = cohort.grid();
  for (const auto& t : cohort.trajectories()) {
    const auto g = t.glucose();
    const auto m = t.intermittent_mask();
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (m[j] && std::isfinite(g[j])) out.push_back({t.subject_id(), grid[j], g[j]});
    }
  }
  return out;
}

inline std::unordered_map<std::string, double> followups_of(const Cohort& cohort) {
  std::unordered_map<std::string, double> out;
  for (const auto& t : cohort.trajectories()) out[t.subject_id()] = t.followup_days();
  return out;
}

// --- CSV formats -----------------------------------------------------------

inline std::vector<Reading> read_readings_csv(const std::string& path) {
  auto t = csv::read_file(path);
  csv::expect_header(t, {"subject_id", "time_minutes", "glucose_mgdl"}, path);
  std::vector<Reading> out;
  out.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    Reading rd;
    rd.subject_id = row[0];
    if (!csv::parse_double(row[1], rd.time_minutes)) {
      throw InputError(path + ":" + std::to_string(t.line_numbers[r]) + ": bad time_minutes");
    }
    if (!csv::parse_double(row[2], rd.glucose_mgdl)) rd.glucose_mgdl = std::nan("");
    out.push_back(std::move(rd));
  }
  return out;
}

inline std::unordered_map<std::string, double> read_followups_csv(const std::string& path) {
  auto t = csv::read_file(path);
  csv::expect_header(t, {"subject_id", "followup_days"}, path);
  std::unordered_map<std::string, double> out;
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    double v = 0.0;
    if (!csv::parse_double(t.rows[r][1], v) || !std::isfinite(v)) {
      throw InputError(path + ":" + std::to_string(t.line_numbers[r]) + ": bad followup_days");
    }
    out[t.rows[r][0]] = v;
  }
  return out;
}

/// External covariates: rows (subject_id, time_minutes, z1..zp).
struct CovariateRows {
  std::vector<std::string> names;
  std::unordered_map<std::string, std::vector<std::pair<double, std::vector<double>>>> by_subject;
};

inline CovariateRows read_covariates_csv(const std::string& path) {
  auto t = csv::read_file(path);
  csv::expect_header(t, {"subject_id", "time_minutes"}, path);
  if (t.header.size() < 3) throw InputError(path + ": no covariate columns");
  CovariateRows out;
  out.names.assign(t.header.begin() + 2, t.header.end());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    const auto& row = t.rows[r];
    double time = 0.0;
    if (!csv::parse_double(row[1], time) || !(time >= 0.0)) {
      throw InputError(path + ":" + std::to_string(t.line_numbers[r]) + ": bad time_minutes");
    }
    std::vector<double> z(row.size() - 2);
    for (std::size_t c = 2; c < row.size(); ++c) {
      if (!csv::parse_double(row[c], z[c - 2]) || !std::isfinite(z[c - 2])) {
        throw InputError(path + ":" + std::to_string(t.line_numbers[r]) +
                         ": non-finite covariate value");
      }
    }
    out.by_subject[row[0]].emplace_back(time, std::move(z));
  }
  for (auto& [id, v] : out.by_subject) {
    std::stable_sort(v.begin(), v.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  return out;
}

/// Carries external covariate rows forward onto the grid. Values before a subject's
/// first row take that first row's value.
inline CovariateMatrix align_covariates(const CovariateRows& rows, const std::string& subject_id,
                                        const TimeGrid& grid) {
  auto it = rows.by_subject.find(subject_id);
  if (it == rows.by_subject.end() || it->second.empty()) {
    throw InputError("subject " + subject_id + " has no covariate rows");
  }
  const auto& v = it->second;
  const auto p = static_cast<Eigen::Index>(rows.names.size());
  CovariateMatrix m(static_cast<Eigen::Index>(grid.size()), p);
  std::size_t cur = 0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    while (cur + 1 < v.size() && v[cur + 1].first <= grid[j]) ++cur;
    for (Eigen::Index c = 0; c < p; ++c) {
      m(static_cast<Eigen::Index>(j), c) = v[cur].second[static_cast<std::size_t>(c)];
    }
  }
  return m;
}

inline void write_readings_csv(std::ostream& os, std::span<const Reading> rows) {
  os << "subject_id,time_minutes,glucose_mgdl\n";
  for (const auto& r : rows) {
    os << r.subject_id << ',' << csv::format(r.time_minutes) << ',' << csv::format(r.glucose_mgdl)
       << '\n';
  }
}

inline void write_followups_csv(std::ostream& os, const Cohort& cohort) {
  os << "subject_id,followup_days\n";
  for (const auto& t : cohort.trajectories()) {
    os << t.subject_id() << ',' << csv::format(t.followup_days()) << '\n';
  }
}

}  // namespace tir_ipw
