#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/csv.hpp"
#include "tir_ipw/errors.hpp"
#include "tir_ipw/range.hpp"
#include "tir_ipw/survival.hpp"

namespace tir_ipw {

enum class Method { oracle, naive, proposed, simplified };
enum class PgMethod { ipw, simplified };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::oracle: return "oracle";
    case Method::naive: return "naive";
    case Method::proposed: return "proposed";
    case Method::simplified: return "simplified";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "oracle") return Method::oracle;
  if (s == "naive") return Method::naive;
  if (s == "proposed") return Method::proposed;
  if (s == "simplified") return Method::simplified;
  throw InputError("unknown method '" + s + "' (oracle, naive, proposed, simplified)");
}

struct Diagnostics {
  double min_survival_weight = 1.0;
  std::size_t min_available_count = std::numeric_limits<std::size_t>::max();
  std::size_t floor_activations = 0;
  std::vector<std::string> notes;
};

/// p_G(t_j) estimated at the K-1 left endpoints t_1..t_{K-1} that enter the time average.
struct PgCurve {
  std::vector<double> values;
  std::vector<double> effective_weight_sums;
  PgMethod method = PgMethod::ipw;
  Diagnostics diagnostics;
};

struct TirEstimate {
  double mu_hat = 0.0;
  Method method = Method::proposed;
  TargetRange range;
  double tau_days = 0.0;
  std::optional<double> se;
  std::optional<std::pair<double, double>> ci;
  std::optional<std::pair<double, double>> ci_normal;
  Diagnostics diagnostics;
};

/// Number of left endpoints in the time average.
inline std::size_t integration_points(const TimeGrid& grid) { return grid.size() - 1; }

inline PositivityError positivity_failure(const TimeGrid& grid, std::size_t j) {
  return PositivityError(
      "positivity violated: no available reading at t = " + csv::format(grid[j]) + " min (" +
          csv::format(grid[j] / kMinutesPerDay) +
          " days), so mean TIR is not identified over this horizon; use a shorter tau",
      grid[j]);
}

/// W = (1/tau) * integral of I(Y(t) in G), as a left-endpoint sum.
inline double subject_tir_oracle(const Trajectory& traj, const TargetRange& g) {
  const auto m = integration_points(traj.grid());
  const auto a = traj.availability();
  const auto y = traj.glucose();
  std::size_t in = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (!a[j]) {
      throw InputError("oracle needs a fully observed path; subject " + traj.subject_id() +
                       " is missing t = " + csv::format(traj.grid()[j]) + " min");
    }
    in += static_cast<std::size_t>(g.contains(y[j]));
  }
  return static_cast<double>(in) / static_cast<double>(m);
}

/// Per-subject proportion in G over available left endpoints.
inline double subject_tir_available(const Trajectory& traj, const TargetRange& g) {
  const auto m = integration_points(traj.grid());
  const auto a = traj.availability();
  const auto y = traj.glucose();
  std::size_t in = 0, seen = 0;
  for (std::size_t j = 0; j < m; ++j) {
    if (a[j]) {
      ++seen;
      in += static_cast<std::size_t>(g.contains(y[j]));
    }
  }
  if (seen == 0) {
    throw InputError("subject " + traj.subject_id() + " has no available reading before tau");
  }
  return static_cast<double>(in) / static_cast<double>(seen);
}

inline TirEstimate oracle_mean_tir(const Cohort& cohort, const TargetRange& g) {
  if (cohort.empty()) throw InputError("empty cohort");
  double s = 0.0;
  for (const auto& t : cohort.trajectories()) s += subject_tir_oracle(t, g);
  TirEstimate e;
  e.mu_hat = s / static_cast<double>(cohort.size());
  e.method = Method::oracle;
  e.range = g;
  e.tau_days = cohort.grid().tau_days();
  return e;
}

inline TirEstimate naive_mean_tir(const Cohort& cohort, const TargetRange& g) {
  if (cohort.empty()) throw InputError("empty cohort");
  std::vector<std::string> empty;
  double s = 0.0;
  for (const auto& t : cohort.trajectories()) {
    bool any = false;
    const auto a = t.availability();
    for (std::size_t j = 0; j + 1 < a.size(); ++j) any = any || a[j];
    if (!any) {
      empty.push_back(t.subject_id());
      continue;
    }
    s += subject_tir_available(t, g);
  }
  if (!empty.empty()) {
    std::string ids;
    for (const auto& id : empty) ids += (ids.empty() ? "" : ", ") + id;
    throw InputError("naive estimator undefined: no available readings for subject(s) " + ids);
  }
  TirEstimate e;
  e.mu_hat = s / static_cast<double>(cohort.size());
  e.method = Method::naive;
  e.range = g;
  e.tau_days = cohort.grid().tau_days();
  return e;
}

namespace detail {

/// Accumulates weighted counts for one grid point. Weights are expressed relative to
/// the largest survival value among contributors so that identical curves give
/// weights of exactly 1 and reproduce the unweighted ratio bit-for-bit.
struct PgColumn {
  double reference = 0.0;
  double numerator = 0.0;
  double denominator = 0.0;
};

inline double floored(double p, double floor, Diagnostics& d) {
  d.min_survival_weight = std::min(d.min_survival_weight, p);
  if (p < floor) {
    ++d.floor_activations;
    return floor;
  }
  return p;
}

}  // namespace detail

/// IPW estimate of p_G with per-subject survival curves and a floor on the weights.
inline PgCurve estimate_pg(const Cohort& cohort, const TargetRange& g,
                           std::span<const SurvivalCurve> curves, double weight_floor = 0.01) {
  if (!(weight_floor > 0.0 && weight_floor < 0.5)) {
    throw InputError("weight floor must lie in (0, 0.5)");
  }
  if (curves.size() != cohort.size()) throw InputError("one survival curve per subject required");
  const auto& grid = cohort.grid();
  const auto m = integration_points(grid);
  for (const auto& c : curves) {
    if (c.values.size() < m) throw InputError("survival curve shorter than the grid");
  }
  PgCurve pg;
  pg.method = PgMethod::ipw;
  pg.values.resize(m);
  pg.effective_weight_sums.resize(m);
  std::vector<detail::PgColumn> col(m);
  std::vector<double> floored_p(cohort.size() * m, 1.0);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto a = cohort[i].availability();
    for (std::size_t j = 0; j < m; ++j) {
      if (!a[j]) continue;
      const double p = detail::floored(curves[i].values[j], weight_floor, pg.diagnostics);
      floored_p[i * m + j] = p;
      col[j].reference = std::max(col[j].reference, p);
    }
  }
  std::vector<std::size_t> count(m, 0);
  for (std::size_t i = 0; i < cohort.size(); ++i) {
    const auto a = cohort[i].availability();
    const auto y = cohort[i].glucose();
    for (std::size_t j = 0; j < m; ++j) {
      if (!a[j]) continue;
      const double w = col[j].reference / floored_p[i * m + j];
      col[j].denominator += w;
      if (g.contains(y[j])) col[j].numerator += w;
      ++count[j];
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (!(col[j].denominator > 0.0)) throw positivity_failure(grid, j);
    pg.values[j] = col[j].numerator / col[j].denominator;
    pg.effective_weight_sums[j] = col[j].denominator / col[j].reference;
    pg.diagnostics.min_available_count = std::min(pg.diagnostics.min_available_count, count[j]);
  }
  return pg;
}

/// Unweighted cross-sectional proportion among available subjects.
inline PgCurve estimate_pg_simplified(const Cohort& cohort, const TargetRange& g) {
  const auto& grid = cohort.grid();
  const auto m = integration_points(grid);
  PgCurve pg;
  pg.method = PgMethod::simplified;
  pg.values.resize(m);
  pg.effective_weight_sums.assign(m, 0.0);
  std::vector<double> num(m, 0.0);
  for (const auto& t : cohort.trajectories()) {
    const auto a = t.availability();
    const auto y = t.glucose();
    for (std::size_t j = 0; j < m; ++j) {
      if (!a[j]) continue;
      pg.effective_weight_sums[j] += 1.0;
      if (g.contains(y[j])) num[j] += 1.0;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (!(pg.effective_weight_sums[j] > 0.0)) throw positivity_failure(grid, j);
    pg.values[j] = num[j] / pg.effective_weight_sums[j];
    pg.diagnostics.min_available_count =
        std::min(pg.diagnostics.min_available_count,
                 static_cast<std::size_t>(pg.effective_weight_sums[j]));
  }
  return pg;
}

/// Time average of p_G over [0, tau) as a left-endpoint sum.
inline TirEstimate mean_tir_from_pg(const PgCurve& pg, const TimeGrid& grid) {
  const auto m = integration_points(grid);
  if (pg.values.size() != m) throw InputError("p_G curve does not match the grid");
  double s = 0.0;
  for (double v : pg.values) s += v;
  TirEstimate e;
  e.mu_hat = s / static_cast<double>(m);
  e.method = pg.method == PgMethod::ipw ? Method::proposed : Method::simplified;
  e.tau_days = grid.tau_days();
  e.diagnostics = pg.diagnostics;
  return e;
}

}  // namespace tir_ipw
