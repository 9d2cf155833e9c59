#pragma once

#include <string>
#include <vector>

#include "tir_ipw/errors.hpp"
#include "tir_ipw/simulator.hpp"

namespace tir_ipw::sim::presets {

/// Group 1 (and 3): low on the first hours, rising to a plateau.
inline ParametricMean mean_group1() { return {190.0, -36.0, 2.0, 10.0, 0.0}; }

/// Group 2: starts near 200 and settles near 165.
inline ParametricMean mean_group2() { return {165.0, 35.0, 1.0, 10.0, 0.0}; }

inline CoxFollowup cox_group1() { return {1.0 / 16.0, 15.0 / 16.0, {-2.0, -2.0}, -0.5, 0.5, 180.0}; }
inline CoxFollowup cox_group2() { return {0.25, 0.75, {2.0, 2.0}, -0.5, 0.5, 230.0}; }
inline CoxFollowup cox_group3() { return {0.5, 0.5, {2.0, 2.0}, -0.5, 0.5, 230.0}; }

inline MissingnessSpec missing(FollowupLaw law) {
  MissingnessSpec m;
  m.monotone = std::move(law);
  return m;
}

/// Three groups with follow-up depending on glucose history through Cox hazards.
inline ScenarioConfig informative(std::size_t n = 200, std::uint64_t seed = 1) {
  ScenarioConfig c;
  c.seed = seed;
  c.groups = {
      {"G1", n, mean_group1(), missing(cox_group1()), 0.0},
      {"G2", n, mean_group2(), missing(cox_group2()), 0.0},
      {"G3", n, mean_group1(), missing(cox_group3()), 0.0},
  };
  return c;
}

/// Follow-up independent of glucose. Groups 1-2 use a tabulated stay-length law, Group 3
/// the 0.8 Unif(0,2) + 0.2 Unif(2,9) day mixture.
inline ScenarioConfig noninformative(std::size_t n = 200, std::uint64_t seed = 1) {
  TabulatedFollowup stay{{0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0},
                         {0.0, 0.10, 0.25, 0.50, 0.65, 0.82, 0.90, 1.0}};
  ScenarioConfig c;
  c.seed = seed;
  c.groups = {
      {"G1", n, mean_group1(), missing(stay), 0.0},
      {"G2", n, mean_group2(), missing(stay), 0.0},
      {"G3", n, mean_group1(), missing(MixtureFollowup{}), 0.0},
  };
  return c;
}

/// Transformation-model follow-up; p_mix = 0 is a proportional-hazards law in zeta,
/// p_mix = 1 a proportional-odds law.
inline ScenarioConfig sensitivity(double p_mix = 1.0, std::size_t n = 200, std::uint64_t seed = 1) {
  ScenarioConfig c;
  c.seed = seed;
  c.groups = {
      {"G1", n, mean_group1(), missing(TransformationFollowup{8.0, p_mix, 0.5}), -3.0},
      {"G2", n, mean_group2(), missing(TransformationFollowup{8.0, p_mix, 0.5}), 3.0},
      {"G3", n, mean_group1(), missing(TransformationFollowup{3.0, p_mix, 0.5}), -3.0},
  };
  return c;
}

/// Complete data: no intermittent gaps, every subject followed past tau.
inline ScenarioConfig complete(std::size_t n = 200, std::uint64_t seed = 1) {
  MissingnessSpec none;
  none.intermittent = false;
  none.monotone = NoFollowupLoss{};
  ScenarioConfig c;
  c.seed = seed;
  c.groups = {{"G1", n, mean_group1(), none, 0.0}, {"G2", n, mean_group2(), none, 0.0}};
  return c;
}

inline ScenarioConfig by_name(const std::string& name, std::size_t n = 200, std::uint64_t seed = 1) {
  if (name == "informative") return informative(n, seed);
  if (name == "noninformative") return noninformative(n, seed);
  if (name == "sensitivity") return sensitivity(1.0, n, seed);
  if (name == "sensitivity-cox") return sensitivity(0.0, n, seed);
  if (name == "complete") return complete(n, seed);
  throw InputError("unknown scenario preset '" + name +
                   "' (informative, noninformative, sensitivity, sensitivity-cox, complete)");
}

}  // namespace tir_ipw::sim::presets
