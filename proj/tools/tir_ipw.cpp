#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/ingest.hpp"
#include "tir_ipw/inference.hpp"
#include "tir_ipw/io.hpp"
#include "tir_ipw/montecarlo.hpp"
#include "tir_ipw/pipeline.hpp"
#include "tir_ipw/presets.hpp"

namespace fs = std::filesystem;
using namespace tir_ipw;

namespace {

struct Common {
  std::string ranges = "inpatient6";
  std::string tau_days = "standard5";
  std::string method = "all";
  std::string mode = "cox";
  std::size_t bootstrap_B = 200;
  double weight_floor = 0.01;
  std::uint64_t seed = 1;
  double step_minutes = 5.0;
  std::optional<double> min_followup_minutes;
  bool allow_nonconverged = false;
  std::string out = ".";
};

std::vector<double> parse_taus(const std::string& text) {
  if (text == "standard5") return {1.0, 3.0, 5.0, 7.0, 9.0};
  std::vector<double> out;
  for (auto part : csv::split(text)) {
    double v = 0.0;
    if (!csv::parse_double(csv::trim(part), v) || !(v > 0.0) || !std::isfinite(v)) {
      throw InputError("bad tau in '" + text + "' (positive days expected)");
    }
    out.push_back(v);
  }
  if (out.empty()) throw InputError("no tau given");
  return out;
}

std::vector<Method> parse_methods(const std::string& text) {
  if (text == "all") return {Method::naive, Method::simplified, Method::proposed, Method::oracle};
  return {parse_method(text)};
}

EstimatorConfig estimator_config(const Common& c, Method m) {
  EstimatorConfig cfg;
  cfg.method = m;
  cfg.mode = parse_weight_mode(c.mode);
  cfg.weight_floor = c.weight_floor;
  cfg.allow_nonconverged = c.allow_nonconverged;
  return cfg;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

struct Dataset {
  std::vector<Reading> readings;
  std::unordered_map<std::string, double> followups;
  std::optional<CovariateRows> covariates;
};

Dataset load(const std::string& readings, const std::string& followups, const std::string& covariates) {
  Dataset d;
  d.readings = read_readings_csv(readings);
  d.followups = read_followups_csv(followups);
  if (!covariates.empty()) d.covariates = read_covariates_csv(covariates);
  return d;
}

Cohort build_cohort(const Dataset& d, const TimeGrid& grid, const Common& c, const std::string& label,
                    std::vector<std::string>& log) {
  IngestOptions io;
  io.min_followup_minutes = c.min_followup_minutes;
  io.group_label = label;
  auto res = ingest_readings(d.readings, grid, d.followups, io);
  for (auto& msg : res.diagnostics) log.push_back(label + ": " + msg);
  if (!d.covariates) return std::move(res.cohort);
  std::vector<CovariateProcess> cov;
  for (const auto& t : res.cohort.trajectories()) {
    cov.push_back(history_covariates(t, align_covariates(*d.covariates, t.subject_id(), grid)));
  }
  return res.cohort.with_covariates(std::move(cov));
}

std::vector<TirEstimate> run_method(const Cohort& cohort, const std::vector<TargetRange>& ranges,
                                    const Common& c, Method m, std::uint64_t stream,
                                    std::vector<PgCurve>* curves) {
  const Engine engine(cohort, ranges, estimator_config(c, m));
  auto est = engine.estimates(false, curves);
  if (c.bootstrap_B > 0) {
    BootstrapOptions bo;
    bo.B = c.bootstrap_B;
    bo.seed = c.seed;
    bo.stream = stream;
    const auto boot = bootstrap_mu(engine, bo);
    attach(est, boot);
  }
  return est;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--ranges", c.ranges, "Target ranges: inpatient6, standard3 or a list like \"(-inf,70);[70,180]\"");
  app->add_option("--tau-days", c.tau_days, "Follow-up windows in days, comma separated, or standard5");
  app->add_option("--method", c.method, "naive, proposed, simplified, oracle or all");
  app->add_option("--mode", c.mode, "Survival weights: cox or km");
  app->add_option("--bootstrap-B", c.bootstrap_B, "Bootstrap replicates (0 disables inference)");
  app->add_option("--weight-floor", c.weight_floor, "Lower bound on survival weights");
  app->add_option("--seed", c.seed, "Random seed");
  app->add_option("--step-minutes", c.step_minutes, "Grid step in minutes");
  app->add_option("--min-followup-minutes", c.min_followup_minutes, "Drop subjects followed for less");
  app->add_flag("--allow-nonconverged", c.allow_nonconverged, "Accept Cox fits that hit the iteration limit");
  app->add_option("--out", c.out, "Output directory");
}

void check_common(const Common& c) {
  if (c.bootstrap_B == 1) throw InputError("--bootstrap-B must be 0 or at least 2");
  if (!(c.step_minutes > 0.0)) throw InputError("--step-minutes must be positive");
}

// --- estimate ----------------------------------------------------------------------

int cmd_estimate(const Common& c, const std::string& readings, const std::string& followups,
                 const std::string& covariates, const std::string& label) {
  check_common(c);
  const auto ranges = ranges::parse_list(c.ranges);
  const auto taus = parse_taus(c.tau_days);
  const auto methods = parse_methods(c.method);
  const auto data = load(readings, followups, covariates);
  fs::create_directories(c.out);

  std::ostringstream est_csv, pg_csv;
  est_csv << kEstimateCsvHeader << '\n';
  pg_csv << "method,range,tau_days,time_minutes,p_g\n";
  json all = json::array();
  std::vector<std::string> log;
  for (double tau : taus) {
    const TimeGrid grid(c.step_minutes, tau);
    const auto cohort = build_cohort(data, grid, c, label, log);
    for (Method m : methods) {
      if (m == Method::oracle && c.method == "all") {
        bool complete = true;
        for (const auto& t : cohort.trajectories()) complete = complete && t.fully_observed();
        if (!complete) {
          log.push_back("tau " + csv::format(tau) + ": oracle skipped, data are not fully observed");
          continue;
        }
      }
      std::vector<PgCurve> curves;
      const auto est = with_stage(("tau " + csv::format(tau) + " " + to_string(m)).c_str(), [&] {
        return run_method(cohort, ranges, c, m, hash_label(label), &curves);
      });
      for (std::size_t r = 0; r < est.size(); ++r) {
        est_csv << csv_row(est[r]) << '\n';
        all.push_back(to_json(est[r]));
        if (r < curves.size()) {
          for (std::size_t j = 0; j < curves[r].values.size(); ++j) {
            pg_csv << to_string(m) << ",\"" << ranges[r].label() << "\"," << csv::format(tau) << ','
                   << csv::format(grid[j]) << ',' << csv::format(curves[r].values[j]) << '\n';
          }
        }
      }
    }
  }
  write_file(fs::path(c.out) / "estimates.csv", est_csv.str());
  write_file(fs::path(c.out) / "estimates.json", dump(all));
  write_file(fs::path(c.out) / "pg_curve.csv", pg_csv.str());
  for (const auto& msg : log) std::cerr << msg << '\n';
  std::cout << est_csv.str();
  return 0;
}

// --- compare -----------------------------------------------------------------------

int cmd_compare(Common c, const std::vector<std::string>& readings, const std::vector<std::string>& followups,
                const std::vector<std::string>& covariates, std::vector<std::string> labels) {
  check_common(c);
  if (readings.size() < 2) throw InputError("compare needs at least two --readings files");
  if (followups.size() != readings.size()) throw InputError("one --followups file per --readings file");
  if (!covariates.empty() && covariates.size() != readings.size()) {
    throw InputError("one --covariates file per group");
  }
  if (c.bootstrap_B < 2) throw InputError("compare needs --bootstrap-B of at least 2");
  if (labels.empty()) {
    for (std::size_t g = 0; g < readings.size(); ++g) labels.push_back("G" + std::to_string(g + 1));
  }
  if (labels.size() != readings.size()) throw InputError("one label per group");
  if (c.method == "all") c.method = "proposed";
  const auto ranges = ranges::parse_list(c.ranges);
  const auto taus = parse_taus(c.tau_days == "standard5" ? "7" : c.tau_days);
  const Method m = parse_method(c.method);
  fs::create_directories(c.out);

  json report = json::array();
  std::ostringstream table;
  std::vector<std::string> log;
  for (double tau : taus) {
    const TimeGrid grid(c.step_minutes, tau);
    std::vector<Engine> engines;
    for (std::size_t g = 0; g < readings.size(); ++g) {
      const auto d = load(readings[g], followups[g], covariates.empty() ? std::string() : covariates[g]);
      engines.emplace_back(build_cohort(d, grid, c, labels[g], log), ranges, estimator_config(c, m));
    }
    const auto tests = wald_test(engines, labels, c.bootstrap_B, c.seed);
    table << "tau = " << csv::format(tau) << " days, method " << to_string(m) << ", B = " << c.bootstrap_B
          << "\n";
    table << std::left << std::setw(22) << "range";
    for (const auto& l : labels) table << std::setw(18) << (l + " (%)");
    table << "p-value\n";
    for (const auto& t : tests) {
      auto j = to_json(t);
      j["tau_days"] = tau;
      j["method"] = to_string(m);
      report.push_back(j);
      table << std::setw(22) << t.range.label();
      for (std::size_t g = 0; g < t.estimates.size(); ++g) {
        table << std::setw(19) << (pct(t.estimates[g]) + " ± " + pct(t.ses[g]));  // "±" is two bytes
      }
      char p[32];
      std::snprintf(p, sizeof p, "%.4f", t.p_value);
      table << p << '\n';
    }
  }
  write_file(fs::path(c.out) / "compare.json", dump(report));
  write_file(fs::path(c.out) / "compare.txt", table.str());
  for (const auto& msg : log) std::cerr << msg << '\n';
  std::cout << table.str();
  return 0;
}

// --- simulate ----------------------------------------------------------------------

sim::ScenarioConfig resolve_scenario(const std::string& scenario, std::optional<std::size_t> n,
                                     std::optional<std::uint64_t> seed) {
  auto config = fs::exists(scenario) ? sim::read_scenario(scenario) : sim::presets::by_name(scenario);
  if (n) {
    for (auto& g : config.groups) g.n = *n;
  }
  if (seed) config.seed = *seed;
  config.validate();
  return config;
}

int cmd_simulate(const Common& c, const std::string& scenario, std::optional<std::size_t> n,
                 std::optional<std::uint64_t> seed, std::optional<std::size_t> truth_n) {
  auto config = resolve_scenario(scenario, n, seed);
  if (truth_n) config.ground_truth_n = *truth_n;
  const auto ranges = ranges::parse_list(c.ranges);
  sim::ScenarioSampler sampler(config);
  if (c.min_followup_minutes) sampler.set_min_followup_minutes(*c.min_followup_minutes);
  const auto draws = sampler.draw(config.seed);
  const auto truth = sampler.ground_truth(ranges);
  fs::create_directories(c.out);
  json excluded = json::object();
  for (const auto& d : draws) {
    const fs::path dir(c.out);
    std::ostringstream r, f, z, full;
    const auto rows = canonical_rows(d.observed);
    write_readings_csv(r, rows);
    write_followups_csv(f, d.observed);
    const auto& spec = config.groups[&d - draws.data()];
    const bool tr = std::holds_alternative<sim::TransformationFollowup>(spec.missing.monotone);
    const bool has_cov = sim::ScenarioSampler::has_follow_covariate(spec);
    if (has_cov) {
      z << "subject_id,time_minutes," << (tr ? "zeta" : "z2") << '\n';
      for (std::size_t i = 0; i < d.observed.size(); ++i) {
        z << d.observed[i].subject_id() << ",0," << csv::format(tr ? d.zeta[i] : d.z2[i]) << '\n';
      }
    }
    write_readings_csv(full, canonical_rows(d.complete));
    write_file(dir / ("readings_" + d.label + ".csv"), r.str());
    write_file(dir / ("followups_" + d.label + ".csv"), f.str());
    if (has_cov) write_file(dir / ("covariates_" + d.label + ".csv"), z.str());
    write_file(dir / ("complete_" + d.label + ".csv"), full.str());
    excluded[d.label] = d.excluded;
    std::cout << d.label << ": " << d.complete.size() << " subjects, " << d.observed.size()
              << " with follow-up data\n";
  }
  auto tj = to_json(truth);
  tj["seed"] = config.seed;
  tj["excluded"] = excluded;
  write_file(fs::path(c.out) / "ground_truth.json", dump(tj));
  write_file(fs::path(c.out) / "scenario.json", dump(to_json(config)));
  return 0;
}

// --- replicate ---------------------------------------------------------------------

int cmd_replicate(const Common& c, const std::string& scenario, std::size_t reps, std::optional<std::size_t> n,
                  bool no_bootstrap, bool quiet) {
  check_common(c);
  auto config = resolve_scenario(scenario, n, std::nullopt);
  mc::Options opt;
  opt.reps = reps;
  opt.B = c.bootstrap_B;
  opt.bootstrap = !no_bootstrap && c.bootstrap_B >= 2;
  opt.seed = c.seed;
  opt.ranges = ranges::parse_list(c.ranges == "inpatient6" ? "standard3" : c.ranges);
  opt.proposed = estimator_config(c, Method::proposed);
  if (!quiet) {
    opt.progress = [](std::size_t done, std::size_t total) {
      if (done % 10 == 0 || done == total) std::cerr << "replicate " << done << "/" << total << '\n';
    };
  }
  if (reps < 50) std::cerr << "note: fewer than 50 replicates give unstable metrics\n";
  std::vector<std::string> log;
  fs::create_directories(c.out);
  std::vector<mc::Replicate> runs;
  try {
    runs = mc::run(config, opt, &log);
  } catch (const Error&) {
    std::ostringstream l;
    for (const auto& line : log) l << line << '\n';
    write_file(fs::path(c.out) / "montecarlo.log", l.str());
    throw;
  }
  const auto summary = mc::summarize(runs, config, opt);
  std::ostringstream s, r, l;
  mc::write_summary_csv(s, summary);
  mc::write_replicates_csv(r, runs, config, opt);
  for (const auto& msg : log) l << msg << '\n';
  write_file(fs::path(c.out) / "montecarlo.csv", s.str());
  write_file(fs::path(c.out) / "montecarlo_replicates.csv", r.str());
  write_file(fs::path(c.out) / "montecarlo.log", l.str());

  std::cout << std::left << std::setw(6) << "group" << std::setw(10) << "method" << std::setw(14) << "range"
            << std::setw(10) << "AvgEst%" << std::setw(10) << "RelBias%" << std::setw(9) << "ESD%" << "BSE%\n";
  for (const auto& cell : summary.cells) {
    std::cout << std::setw(6) << cell.group << std::setw(10) << to_string(cell.method) << std::setw(14)
              << cell.range.label() << std::setw(10) << pct(cell.avg_est) << std::setw(10) << pct(cell.rel_bias)
              << std::setw(9) << pct(cell.esd) << (std::isnan(cell.mean_bse) ? "-" : pct(cell.mean_bse)) << '\n';
  }
  for (const auto& t : summary.tests) {
    std::cout << std::setw(15) << t.comparison << std::setw(10) << to_string(t.method) << std::setw(14)
              << t.range.label() << pct(t.rejection_rate) << "%\n";
  }
  std::cout << summary.failures << " failed replicates\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean time-in-range estimation from CGM data with informative follow-up loss"};
  app.set_config("--config", "", "TOML/INI file with option values; command-line flags take precedence");
  app.require_subcommand(1);
  Common c;

  auto* est = app.add_subcommand("estimate", "Estimate mean TIR for one group");
  std::string readings, followups, covariates, label = "group";
  est->add_option("--readings", readings, "CSV: subject_id,time_minutes,glucose_mgdl")->required();
  est->add_option("--followups", followups, "CSV: subject_id,followup_days")->required();
  est->add_option("--covariates", covariates, "CSV: subject_id,time_minutes,z...");
  est->add_option("--label", label, "Group label");
  add_common(est, c);

  auto* cmp = app.add_subcommand("compare", "Wald test of equal mean TIR across groups");
  std::vector<std::string> g_readings, g_followups, g_covariates, g_labels;
  cmp->add_option("--readings", g_readings, "One readings CSV per group")->required();
  cmp->add_option("--followups", g_followups, "One follow-up CSV per group")->required();
  cmp->add_option("--covariates", g_covariates, "One covariate CSV per group");
  cmp->add_option("--labels", g_labels, "Group labels")->delimiter(',');
  add_common(cmp, c);

  auto* simc = app.add_subcommand("simulate", "Generate a simulated dataset and its ground truth");
  std::string scenario = "informative";
  std::optional<std::size_t> n, truth_n;
  std::optional<std::uint64_t> sim_seed;
  simc->add_option("--scenario", scenario, "Preset name or scenario JSON file");
  simc->add_option("--n", n, "Subjects per group");
  simc->add_option("--seed", sim_seed, "Override the scenario seed");
  simc->add_option("--truth-n", truth_n, "Complete paths per group for the ground truth");
  simc->add_option("--ranges", c.ranges, "Target ranges for the ground truth");
  simc->add_option("--min-followup-minutes", c.min_followup_minutes, "Drop subjects followed for less");
  simc->add_option("--out", c.out, "Output directory");

  auto* rep = app.add_subcommand("replicate", "Monte Carlo study of oracle, naive and proposed estimators");
  std::size_t reps = 200;
  bool no_bootstrap = false, quiet = false;
  rep->add_option("--scenario", scenario, "Preset name or scenario JSON file");
  rep->add_option("--reps", reps, "Simulated datasets")->check(CLI::PositiveNumber);
  rep->add_option("--n", n, "Subjects per group");
  rep->add_flag("--no-bootstrap", no_bootstrap, "Skip standard errors and tests");
  rep->add_flag("--quiet", quiet, "No progress output");
  add_common(rep, c);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*est) return cmd_estimate(c, readings, followups, covariates, label);
    if (*cmp) return cmd_compare(c, g_readings, g_followups, g_covariates, g_labels);
    if (*simc) return cmd_simulate(c, scenario, n, sim_seed, truth_n);
    if (*rep) return cmd_replicate(c, scenario, reps, n, no_bootstrap, quiet);
  } catch (const PositivityError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const FitError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
