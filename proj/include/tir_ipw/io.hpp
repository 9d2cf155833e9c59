#pragma once

#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tir_ipw/csv.hpp"
#include "tir_ipw/estimators.hpp"
#include "tir_ipw/inference.hpp"
#include "tir_ipw/pipeline.hpp"
#include "tir_ipw/simulator.hpp"
#include "tir_ipw/survival.hpp"

namespace tir_ipw {

using json = nlohmann::ordered_json;

namespace detail {
/// JSON has no infinities; range bounds use the strings "inf" / "-inf".
inline json bound_json(double v) {
  if (std::isinf(v)) return v < 0 ? "-inf" : "inf";
  return v;
}
inline double bound_from(const json& j) {
  if (j.is_string()) return ranges::parse_bound(j.get<std::string>());
  return j.get<double>();
}
inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace detail

// --- CoxFit ------------------------------------------------------------------

inline json to_json(const CoxFit& f) {
  json j;
  j["beta"] = std::vector<double>(f.beta.data(), f.beta.data() + f.beta.size());
  j["jump_times_minutes"] = f.jump_times;
  j["increments"] = f.increments;
  j["cumulative"] = f.cumulative;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["final_score_norm"] = f.final_score_norm;
  j["log_partial_likelihood"] = f.log_partial_likelihood;
  j["null_log_partial_likelihood"] = f.null_log_partial_likelihood;
  return j;
}

inline CoxFit cox_fit_from_json(const json& j) {
  CoxFit f;
  const auto beta = j.at("beta").get<std::vector<double>>();
  f.beta = Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  f.jump_times = j.at("jump_times_minutes").get<std::vector<double>>();
  f.cumulative = j.at("cumulative").get<std::vector<double>>();
  if (j.contains("increments")) {
    f.increments = j.at("increments").get<std::vector<double>>();
  } else {
    f.increments.resize(f.cumulative.size());
    for (std::size_t k = 0; k < f.cumulative.size(); ++k) {
      f.increments[k] = f.cumulative[k] - (k ? f.cumulative[k - 1] : 0.0);
    }
  }
  if (f.jump_times.size() != f.cumulative.size() || f.increments.size() != f.cumulative.size()) {
    throw InputError("Cox fit document has inconsistent jump arrays");
  }
  f.converged = j.value("converged", false);
  f.iterations = j.value("iterations", 0);
  f.final_score_norm = j.value("final_score_norm", 0.0);
  f.log_partial_likelihood = j.value("log_partial_likelihood", 0.0);
  f.null_log_partial_likelihood = j.value("null_log_partial_likelihood", 0.0);
  return f;
}

// --- ranges and estimates --------------------------------------------------------

inline json to_json(const TargetRange& g) {
  return json{{"label", g.label()},
              {"lower", detail::bound_json(g.lower)},
              {"upper", detail::bound_json(g.upper)},
              {"lower_inclusive", g.lower_inclusive},
              {"upper_inclusive", g.upper_inclusive}};
}

inline TargetRange range_from_json(const json& j) {
  return {detail::bound_from(j.at("lower")), detail::bound_from(j.at("upper")),
          j.at("lower_inclusive").get<bool>(), j.at("upper_inclusive").get<bool>()};
}

inline json to_json(const Diagnostics& d) {
  json j;
  j["min_survival_weight"] = d.min_survival_weight;
  j["min_available_count"] =
      d.min_available_count == std::numeric_limits<std::size_t>::max() ? json(nullptr) : json(d.min_available_count);
  j["floor_activations"] = d.floor_activations;
  j["notes"] = d.notes;
  return j;
}

inline json to_json(const TirEstimate& e) {
  json j;
  j["method"] = to_string(e.method);
  j["range"] = to_json(e.range);
  j["tau_days"] = e.tau_days;
  j["estimate"] = e.mu_hat;
  j["se"] = detail::optional_number(e.se);
  j["ci_lo"] = e.ci ? json(e.ci->first) : json(nullptr);
  j["ci_hi"] = e.ci ? json(e.ci->second) : json(nullptr);
  j["ci_normal_lo"] = e.ci_normal ? json(e.ci_normal->first) : json(nullptr);
  j["ci_normal_hi"] = e.ci_normal ? json(e.ci_normal->second) : json(nullptr);
  j["diagnostics"] = to_json(e.diagnostics);
  return j;
}

inline TirEstimate estimate_from_json(const json& j) {
  TirEstimate e;
  e.method = parse_method(j.at("method").get<std::string>());
  e.range = range_from_json(j.at("range"));
  e.tau_days = j.at("tau_days").get<double>();
  e.mu_hat = j.at("estimate").get<double>();
  if (!j.at("se").is_null()) e.se = j.at("se").get<double>();
  if (!j.at("ci_lo").is_null()) e.ci = {j.at("ci_lo").get<double>(), j.at("ci_hi").get<double>()};
  if (j.contains("ci_normal_lo") && !j.at("ci_normal_lo").is_null()) {
    e.ci_normal = {j.at("ci_normal_lo").get<double>(), j.at("ci_normal_hi").get<double>()};
  }
  return e;
}

inline const char* kEstimateCsvHeader = "method,range,tau_days,estimate,se,ci_lo,ci_hi";

inline std::string csv_row(const TirEstimate& e) {
  auto opt = [](const std::optional<double>& v) { return v ? csv::format(*v) : std::string(); };
  std::string s = to_string(e.method) + ",\"" + e.range.label() + "\"," + csv::format(e.tau_days) + ',' +
                  csv::format(e.mu_hat) + ',' + opt(e.se) + ',';
  s += e.ci ? csv::format(e.ci->first) + ',' + csv::format(e.ci->second) : std::string(",");
  return s;
}

// --- Wald tests -----------------------------------------------------------------------

inline json to_json(const WaldTest& t) {
  json j;
  j["range"] = to_json(t.range);
  j["groups"] = t.groups;
  j["estimates"] = t.estimates;
  j["ses"] = t.ses;
  j["contrast"] = std::vector<double>(t.contrast.data(), t.contrast.data() + t.contrast.size());
  json cov = json::array();
  for (Eigen::Index r = 0; r < t.covariance.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < t.covariance.cols(); ++c) row.push_back(t.covariance(r, c));
    cov.push_back(row);
  }
  j["covariance"] = cov;
  j["statistic"] = t.statistic;
  j["df"] = t.df;
  j["p_value"] = t.p_value;
  j["B"] = t.B;
  j["seed"] = t.seed;
  return j;
}

// --- scenario configuration ------------------------------------------------------------

namespace sim {

inline json to_json(const MeanFunction& m) {
  if (const auto* p = std::get_if<ParametricMean>(&m)) {
    return json{{"type", "parametric"},
                {"level", p->level},
                {"decay_amplitude", p->decay_amplitude},
                {"decay_rate", p->decay_rate},
                {"oscillation_amplitude", p->oscillation_amplitude},
                {"phase", p->phase}};
  }
  return json{{"type", "tabulated"}, {"values", std::get<TabulatedMean>(m).values}};
}

inline MeanFunction mean_from_json(const json& j) {
  const auto type = j.value("type", std::string("parametric"));
  if (type == "tabulated") return TabulatedMean{j.at("values").get<std::vector<double>>()};
  if (type != "parametric") throw InputError("unknown mean type '" + type + "'");
  ParametricMean p;
  p.level = j.value("level", p.level);
  p.decay_amplitude = j.value("decay_amplitude", p.decay_amplitude);
  p.decay_rate = j.value("decay_rate", p.decay_rate);
  p.oscillation_amplitude = j.value("oscillation_amplitude", p.oscillation_amplitude);
  p.phase = j.value("phase", p.phase);
  return p;
}

inline json to_json(const FollowupLaw& law) {
  json j;
  j["mode"] = mode_name(law);
  std::visit(
      [&](const auto& l) {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, CoxFollowup>) {
          j["a"] = l.a;
          j["b"] = l.b;
          j["beta"] = l.beta;
          j["z2_low"] = l.z2_low;
          j["z2_high"] = l.z2_high;
          j["z1_reference"] = l.z1_reference;
        } else if constexpr (std::is_same_v<T, MixtureFollowup>) {
          j["weights"] = l.weights;
          json comps = json::array();
          for (const auto& [lo, hi] : l.components) comps.push_back({lo, hi});
          j["components"] = comps;
        } else if constexpr (std::is_same_v<T, TabulatedFollowup>) {
          j["days"] = l.days;
          j["cdf"] = l.cdf;
        } else if constexpr (std::is_same_v<T, TransformationFollowup>) {
          j["s"] = l.s;
          j["p_mix"] = l.p_mix;
          j["zeta_probability"] = l.zeta_probability;
        }
      },
      law);
  return j;
}

inline FollowupLaw followup_from_json(const json& j) {
  const auto mode = j.value("mode", std::string("cox"));
  if (mode == "none") return NoFollowupLoss{};
  if (mode == "cox") {
    CoxFollowup c;
    c.a = j.value("a", c.a);
    c.b = j.value("b", c.b);
    if (j.contains("beta")) c.beta = j.at("beta").get<std::vector<double>>();
    c.z2_low = j.value("z2_low", c.z2_low);
    c.z2_high = j.value("z2_high", c.z2_high);
    c.z1_reference = j.value("z1_reference", c.z1_reference);
    if (!(c.b >= 0.0 && c.b < 1.0) || !(c.a > 0.0)) throw InputError("cox follow-up needs a > 0, 0 <= b < 1");
    return c;
  }
  if (mode == "mixture") {
    MixtureFollowup m;
    if (j.contains("weights")) m.weights = j.at("weights").get<std::vector<double>>();
    if (j.contains("components")) {
      m.components.clear();
      for (const auto& c : j.at("components")) m.components.emplace_back(c.at(0).get<double>(), c.at(1).get<double>());
    }
    if (m.weights.size() != m.components.size() || m.weights.empty()) {
      throw InputError("mixture follow-up needs one weight per component");
    }
    return m;
  }
  if (mode == "tabulated_cdf") {
    TabulatedFollowup t{j.at("days").get<std::vector<double>>(), j.at("cdf").get<std::vector<double>>()};
    if (t.days.size() != t.cdf.size() || t.days.size() < 2 || t.cdf.front() != 0.0 || t.cdf.back() != 1.0) {
      throw InputError("tabulated_cdf needs matching days/cdf arrays from cdf 0 to 1");
    }
    for (std::size_t k = 1; k < t.cdf.size(); ++k) {
      if (!(t.days[k] > t.days[k - 1]) || t.cdf[k] < t.cdf[k - 1]) {
        throw InputError("tabulated_cdf knots must increase");
      }
    }
    return t;
  }
  if (mode == "transformation") {
    TransformationFollowup t;
    t.s = j.value("s", t.s);
    t.p_mix = j.value("p_mix", t.p_mix);
    t.zeta_probability = j.value("zeta_probability", t.zeta_probability);
    return t;
  }
  throw InputError("unknown follow-up mode '" + mode + "'");
}

inline json to_json(const ScenarioConfig& c) {
  json j;
  j["grid"] = {{"step_minutes", c.grid.step()}, {"tau_days", c.grid.tau_days()}};
  j["kernel"] = {{"sigma", c.kernel.sigma}, {"l", c.kernel.length_scale}, {"p", c.kernel.period},
                 {"jitter", c.kernel.jitter}};
  j["seed"] = c.seed;
  j["ground_truth_n"] = c.ground_truth_n;
  json groups = json::array();
  for (const auto& g : c.groups) {
    groups.push_back({{"label", g.label},
                      {"n", g.n},
                      {"mean", to_json(g.mean)},
                      {"zeta_shift", g.zeta_shift},
                      {"missing",
                       {{"intermittent", g.missing.intermittent},
                        {"intermittent_start_scale", g.missing.intermittent_start_scale},
                        {"gap_low", g.missing.gap_low},
                        {"gap_high", g.missing.gap_high},
                        {"monotone", to_json(g.missing.monotone)}}}});
  }
  j["groups"] = groups;
  return j;
}

inline ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.grid = TimeGrid(g.value("step_minutes", 5.0), g.value("tau_days", 7.0));
  }
  if (j.contains("kernel")) {
    const auto& k = j.at("kernel");
    c.kernel.sigma = k.value("sigma", c.kernel.sigma);
    c.kernel.length_scale = k.value("l", c.kernel.length_scale);
    c.kernel.period = k.value("p", c.kernel.period);
    c.kernel.jitter = k.value("jitter", c.kernel.jitter);
  }
  c.seed = j.value("seed", c.seed);
  c.ground_truth_n = j.value("ground_truth_n", c.ground_truth_n);
  for (const auto& g : j.at("groups")) {
    GroupSpec s;
    s.label = g.at("label").get<std::string>();
    s.n = g.value("n", s.n);
    if (g.contains("mean")) s.mean = mean_from_json(g.at("mean"));
    s.zeta_shift = g.value("zeta_shift", 0.0);
    if (g.contains("missing")) {
      const auto& m = g.at("missing");
      s.missing.intermittent = m.value("intermittent", true);
      s.missing.intermittent_start_scale = m.value("intermittent_start_scale", s.missing.intermittent_start_scale);
      s.missing.gap_low = m.value("gap_low", s.missing.gap_low);
      s.missing.gap_high = m.value("gap_high", s.missing.gap_high);
      if (m.contains("monotone")) s.missing.monotone = followup_from_json(m.at("monotone"));
    }
    c.groups.push_back(std::move(s));
  }
  c.validate();
  return c;
}

inline ScenarioConfig read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open scenario file " + path);
  try {
    return scenario_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline json to_json(const GroundTruth& t) {
  json j;
  j["ranges"] = json::array();
  for (const auto& r : t.ranges) j["ranges"].push_back(to_json(r));
  j["groups"] = json::array();
  for (const auto& g : t.groups) {
    j["groups"].push_back({{"label", g.label}, {"n", g.n}, {"mu", g.mu}, {"mc_se", g.mc_se}});
  }
  return j;
}

}  // namespace sim

/// Shortest round-trip text for every double, so equal numbers always print identically.
inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace tir_ipw
