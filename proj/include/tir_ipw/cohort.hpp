#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "tir_ipw/errors.hpp"
#include "tir_ipw/grid.hpp"

namespace tir_ipw {

using Mask = std::vector<std::uint8_t>;
using CovariateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr double kUndefined = std::numeric_limits<double>::quiet_NaN();

/// One subject's glucose path on a grid with its availability bookkeeping.
///
/// availability(t_j) = intermittent(t_j) * [t_j <= followup]. Glucose is only
/// guaranteed to be defined where availability is 1.
class Trajectory {
 public:
  Trajectory() = default;

  Trajectory(std::string subject_id, TimeGrid grid, std::vector<double> glucose,
             Mask intermittent, double followup_minutes)
      : id_(std::move(subject_id)),
        grid_(grid),
        glucose_(std::move(glucose)),
        intermittent_(std::move(intermittent)),
        followup_(followup_minutes) {
    const auto k = grid_.size();
    if (glucose_.size() != k || intermittent_.size() != k) {
      throw InputError("subject " + id_ + ": path length does not match the grid");
    }
    if (!(followup_ > 0.0) || std::isnan(followup_)) {
      throw InputError("subject " + id_ + ": follow-up duration must be positive");
    }
    available_.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      available_[j] = static_cast<std::uint8_t>(intermittent_[j] != 0 && grid_[j] <= followup_);
      if (available_[j] && !std::isfinite(glucose_[j])) {
        throw InputError("subject " + id_ + ": glucose undefined at available time " +
                         std::to_string(grid_[j]) + " min");
      }
    }
  }

  /// Fully observed path with follow-up exactly tau.
  static Trajectory complete(std::string subject_id, TimeGrid grid, std::vector<double> glucose) {
    Mask all(grid.size(), 1);
    const double tau = grid.tau_minutes();
    return Trajectory(std::move(subject_id), grid, std::move(glucose), std::move(all), tau);
  }

  const std::string& subject_id() const { return id_; }
  const TimeGrid& grid() const { return grid_; }
  std::span<const double> glucose() const { return glucose_; }
  std::span<const std::uint8_t> availability() const { return available_; }
  std::span<const std::uint8_t> intermittent_mask() const { return intermittent_; }
  double followup_minutes() const { return followup_; }
  double followup_days() const { return followup_ / kMinutesPerDay; }

  bool fully_observed() const {
    for (auto a : available_) {
      if (!a) return false;
    }
    return true;
  }

  std::size_t available_count() const {
    std::size_t c = 0;
    for (auto a : available_) c += a;
    return c;
  }

  /// Copy keeping glucose only where available (NaN elsewhere).
  Trajectory masked() const {
    std::vector<double> g(glucose_.size(), kUndefined);
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (available_[j]) g[j] = glucose_[j];
    }
    return Trajectory(id_, grid_, std::move(g), intermittent_, followup_);
  }

 private:
  std::string id_;
  TimeGrid grid_;
  std::vector<double> glucose_;
  Mask intermittent_;
  Mask available_;
  double followup_ = 0.0;
};

/// Piecewise-constant covariate path Z_i(t_j); rows are grid points, columns covariates.
class CovariateProcess {
 public:
  CovariateProcess() = default;

  CovariateProcess(std::string subject_id, TimeGrid grid, CovariateMatrix values)
      : id_(std::move(subject_id)), grid_(grid), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.rows()) != grid_.size()) {
      throw InputError("subject " + id_ + ": covariate rows do not match the grid");
    }
    if (values_.cols() < 1) throw InputError("subject " + id_ + ": no covariates");
    if (!values_.allFinite()) {
      throw InputError("subject " + id_ + ": non-finite covariate value");
    }
  }

  const std::string& subject_id() const { return id_; }
  const TimeGrid& grid() const { return grid_; }
  std::size_t dimension() const { return static_cast<std::size_t>(values_.cols()); }
  const CovariateMatrix& values() const { return values_; }
  /// Z(t_j) as a pointer to `dimension()` contiguous values.
  const double* row(std::size_t j) const { return values_.data() + j * values_.cols(); }

 private:
  std::string id_;
  TimeGrid grid_;
  CovariateMatrix values_;
};

/// Subjects of one group sharing a grid; covariates (if any) align one-to-one.
class Cohort {
 public:
  Cohort() = default;

  Cohort(TimeGrid grid, std::vector<Trajectory> trajectories,
         std::vector<CovariateProcess> covariates = {}, std::string group_label = "group")
      : grid_(grid),
        trajectories_(std::move(trajectories)),
        covariates_(std::move(covariates)),
        label_(std::move(group_label)) {
    std::unordered_set<std::string> seen;
    for (const auto& t : trajectories_) {
      if (!(t.grid() == grid_)) throw InputError("subject " + t.subject_id() + ": grid mismatch");
      if (!seen.insert(t.subject_id()).second) {
        throw InputError("duplicate subject id " + t.subject_id());
      }
    }
    if (!covariates_.empty()) {
      if (covariates_.size() != trajectories_.size()) {
        throw InputError("covariates and trajectories differ in count");
      }
      const auto p = covariates_.front().dimension();
      for (std::size_t i = 0; i < covariates_.size(); ++i) {
        if (covariates_[i].subject_id() != trajectories_[i].subject_id()) {
          throw InputError("covariates misaligned at subject " + trajectories_[i].subject_id());
        }
        if (!(covariates_[i].grid() == grid_)) {
          throw InputError("subject " + covariates_[i].subject_id() + ": covariate grid mismatch");
        }
        if (covariates_[i].dimension() != p) {
          throw InputError("covariate dimension differs for subject " +
                           covariates_[i].subject_id());
        }
      }
    }
  }

  const TimeGrid& grid() const { return grid_; }
  std::size_t size() const { return trajectories_.size(); }
  bool empty() const { return trajectories_.empty(); }
  const std::vector<Trajectory>& trajectories() const { return trajectories_; }
  const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }
  bool has_covariates() const { return !covariates_.empty(); }
  const std::vector<CovariateProcess>& covariates() const { return covariates_; }
  const std::string& label() const { return label_; }

  Cohort with_covariates(std::vector<CovariateProcess> cov) const {
    return Cohort(grid_, trajectories_, std::move(cov), label_);
  }

 private:
  TimeGrid grid_;
  std::vector<Trajectory> trajectories_;
  std::vector<CovariateProcess> covariates_;
  std::string label_;
};

/// Z1(t_j) for every grid point: mean available glucose over [t_j - 1 day, t_j) / 100.
///
/// Zero during the first day. When the window holds no available reading the
/// previous grid point's value is carried forward.
inline std::vector<double> prev_day_mean_series(const Trajectory& traj) {
  const auto& grid = traj.grid();
  const auto k = grid.size();
  const auto window = grid.points_per(kMinutesPerDay);
  const auto g = traj.glucose();
  const auto a = traj.availability();
  std::vector<double> out(k, 0.0);
  double sum = 0.0;
  std::size_t count = 0;
  double last = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    // window for t_j is indices [j - window, j - 1]
    if (j >= 1 && a[j - 1]) {
      sum += g[j - 1];
      ++count;
    }
    if (j >= window + 1 && a[j - 1 - window]) {
      sum -= g[j - 1 - window];
      --count;
    }
    if (grid[j] < kMinutesPerDay) {
      out[j] = 0.0;
      continue;
    }
    if (count > 0) last = sum / static_cast<double>(count) / 100.0;
    out[j] = last;
  }
  return out;
}

/// Z1 at one grid point; see prev_day_mean_series.
inline double history_covariate_prev_day_mean(const Trajectory& traj, std::size_t grid_index) {
  if (grid_index >= traj.grid().size()) throw InputError("grid index beyond horizon");
  return prev_day_mean_series(traj)[grid_index];
}

/// Covariates (Z1(t), extra_1, ..., extra_q) with the extras constant in time.
inline CovariateProcess history_covariates(const Trajectory& traj,
                                           std::span<const double> subject_level = {}) {
  const auto z1 = prev_day_mean_series(traj);
  const auto k = z1.size();
  CovariateMatrix m(static_cast<Eigen::Index>(k),
                    static_cast<Eigen::Index>(1 + subject_level.size()));
  for (std::size_t j = 0; j < k; ++j) {
    m(static_cast<Eigen::Index>(j), 0) = z1[j];
    for (std::size_t c = 0; c < subject_level.size(); ++c) {
      m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(c + 1)) = subject_level[c];
    }
  }
  return CovariateProcess(traj.subject_id(), traj.grid(), std::move(m));
}

/// Appends time-varying external columns (already on the grid) to the history covariate.
inline CovariateProcess history_covariates(const Trajectory& traj, const CovariateMatrix& external) {
  const auto z1 = prev_day_mean_series(traj);
  const auto k = static_cast<Eigen::Index>(z1.size());
  if (external.rows() != k) throw InputError("external covariates do not match the grid");
  CovariateMatrix m(k, 1 + external.cols());
  for (Eigen::Index j = 0; j < k; ++j) {
    m(j, 0) = z1[static_cast<std::size_t>(j)];
    for (Eigen::Index c = 0; c < external.cols(); ++c) m(j, c + 1) = external(j, c);
  }
  return CovariateProcess(traj.subject_id(), traj.grid(), std::move(m));
}

}  // namespace tir_ipw
