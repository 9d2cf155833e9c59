#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/presets.hpp"

namespace th {

using namespace tir_ipw;

inline TimeGrid minutes_grid(double minutes, double step = 5.0) {
  return TimeGrid(step, minutes / kMinutesPerDay);
}

/// Path with every grid point observed and the given follow-up.
inline Trajectory path(const std::string& id, const TimeGrid& grid, std::vector<double> y,
                       double followup_minutes) {
  return Trajectory(id, grid, std::move(y), Mask(grid.size(), 1), followup_minutes);
}

inline std::vector<double> constant(const TimeGrid& grid, double v) {
  return std::vector<double>(grid.size(), v);
}

/// First group of a preset scenario, drawn once.
inline sim::GroupDraw draw_group(const sim::ScenarioConfig& c, std::size_t g, std::uint64_t seed) {
  sim::ScenarioSampler s(c);
  return s.draw(seed, 1).at(g);
}

// --- n = 6 proportional-hazards example ---

// z_i(t) = before_i for t < switch_i, after_i from switch_i on (switch on the grid)
struct HandSubject {
  double c;
  double before;
  double after;
  double switch_at;
  double z(double t) const { return t < switch_at ? before : after; }
};

inline const std::vector<HandSubject> kHand{
    {37.0, 0.5, 1.5, 20.0},  {37.0, -0.3, -0.3, 0.0}, {120.0, 1.0, 0.2, 60.0},
    {250.0, 0.0, 0.8, 100.0}, {2000.0, 0.4, -0.5, 500.0}, {600.0, -1.0, 0.3, 300.0},
};

inline TimeGrid hand_grid() { return TimeGrid(5.0, 1.0); }

inline std::vector<CovariateProcess> hand_covariates(const TimeGrid& grid) {
  std::vector<CovariateProcess> out;
  for (std::size_t i = 0; i < kHand.size(); ++i) {
    CovariateMatrix m(static_cast<Eigen::Index>(grid.size()), 1);
    for (std::size_t j = 0; j < grid.size(); ++j) m(static_cast<Eigen::Index>(j), 0) = kHand[i].z(grid[j]);
    out.emplace_back("s" + std::to_string(i), grid, m);
  }
  return out;
}

// Breslow log partial likelihood straight from the definition, covariates at u-.
inline double oracle_loglik(double beta, double tau) {
  double ll = 0.0;
  std::vector<double> times;
  for (const auto& s : kHand) {
    if (s.c <= tau) times.push_back(s.c);
  }
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  for (double u : times) {
    double risk = 0.0;
    int d = 0;
    for (const auto& s : kHand) {
      const double obs = std::min(s.c, tau);
      const double z = s.z(u - 1e-9);
      if (obs >= u) risk += std::exp(beta * z);
      if (s.c == u) {
        ll += beta * z;
        ++d;
      }
    }
    ll -= d * std::log(risk);
  }
  return ll;
}

/// Maximizer of the oracle log partial likelihood over [-5, 5] in steps of 1e-4.
inline double grid_search_beta(double tau) {
  double best = -5.0, best_ll = -1e300;
  for (int k = 0; k <= 100000; ++k) {
    const double b = -5.0 + 1e-4 * k;
    const double ll = oracle_loglik(b, tau);
    if (ll > best_ll) {
      best_ll = ll;
      best = b;
    }
  }
  return best;
}

}  // namespace th
