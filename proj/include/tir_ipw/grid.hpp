#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "tir_ipw/errors.hpp"

namespace tir_ipw {

inline constexpr double kMinutesPerDay = 1440.0;

/// Equally spaced reading times 0 = t_1 < ... < t_K = tau, in minutes.
///
/// The horizon is given in days and must be a whole number of steps so that the
/// last grid point is exactly tau.
class TimeGrid {
 public:
  explicit TimeGrid(double step_minutes = 5.0, double tau_days = 7.0)
      : step_(step_minutes), tau_days_(tau_days) {
    if (!(step_minutes > 0.0) || !std::isfinite(step_minutes)) {
      throw InputError("grid step must be a positive number of minutes");
    }
    if (!(tau_days > 0.0) || !std::isfinite(tau_days)) {
      throw InputError("grid horizon tau must be a positive number of days");
    }
    const double steps = tau_days * kMinutesPerDay / step_minutes;
    const double whole = std::floor(steps + 1e-9);
    if (std::abs(steps - whole) > 1e-9 * std::max(1.0, steps)) {
      throw InputError("horizon of " + std::to_string(tau_days) +
                       " days is not a whole number of " + std::to_string(step_minutes) +
                       "-minute steps");
    }
    size_ = static_cast<std::size_t>(whole) + 1;
  }

  double step() const { return step_; }
  double tau_days() const { return tau_days_; }
  double tau_minutes() const { return static_cast<double>(size_ - 1) * step_; }
  std::size_t size() const { return size_; }

  /// Time of grid point j in minutes.
  double operator[](std::size_t j) const { return static_cast<double>(j) * step_; }
  double time(std::size_t j) const { return (*this)[j]; }

  /// Index j of the left-closed interval [t_j, t_{j+1}) holding t. Can be >= size().
  std::size_t interval_index(double t_minutes) const {
    if (t_minutes <= 0.0) return 0;
    return static_cast<std::size_t>(std::floor(t_minutes / step_));
  }

  /// Index of the grid value that a right-continuous step path takes just before t.
  std::size_t left_limit_index(double t_minutes) const {
    if (t_minutes <= 0.0) return 0;
    const double q = t_minutes / step_;
    const double c = std::ceil(q);
    return c >= 1.0 ? static_cast<std::size_t>(c) - 1 : 0;
  }

  /// Number of grid points in a window of the given length preceding a point.
  std::size_t points_per(double minutes) const {
    return static_cast<std::size_t>(std::floor(minutes / step_ + 1e-9));
  }

  friend bool operator==(const TimeGrid& a, const TimeGrid& b) {
    return a.step_ == b.step_ && a.size_ == b.size_;
  }

 private:
  double step_;
  double tau_days_;
  std::size_t size_ = 0;
};

}  // namespace tir_ipw
