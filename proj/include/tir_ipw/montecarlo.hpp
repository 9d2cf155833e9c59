#pragma once

#include <cmath>
#include <atomic>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tir_ipw/csv.hpp"
#include "tir_ipw/inference.hpp"
#include "tir_ipw/pipeline.hpp"
#include "tir_ipw/simulator.hpp"

namespace tir_ipw::mc {

inline const std::vector<Method>& methods() {
  static const std::vector<Method> m{Method::oracle, Method::naive, Method::proposed};
  return m;
}

struct Options {
  std::size_t reps = 200;
  std::size_t B = 200;
  std::uint64_t seed = 1;
  std::vector<TargetRange> ranges = ranges::standard3();
  EstimatorConfig proposed;
  bool bootstrap = true;
  /// Group indices compared under the null (same mean) and the alternative.
  std::pair<std::size_t, std::size_t> size_pair{0, 2};
  std::pair<std::size_t, std::size_t> power_pair{0, 1};
  double alpha = 0.05;
  double max_failure_fraction = 0.05;
  unsigned threads = 0;
  /// Called after each finished replicate with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

/// One simulated dataset: estimates[g][m][r], bootstrap SEs, and test p-values[m][r].
struct Replicate {
  std::size_t index = 0;
  bool ok = false;
  std::string error;
  std::vector<std::vector<std::vector<double>>> estimate;
  std::vector<std::vector<std::vector<double>>> bse;
  std::vector<std::vector<double>> p_size;
  std::vector<std::vector<double>> p_power;
};

inline Replicate run_replicate(const sim::ScenarioSampler& sampler, std::size_t rep, const Options& opt) {
  Replicate out;
  out.index = rep;
  const auto G = sampler.config().groups.size();
  const auto M = methods().size();
  const auto R = opt.ranges.size();
  const auto seed = derive_seed(opt.seed, {0x7265706cULL, static_cast<std::uint64_t>(rep)});
  try {
    const auto draw = sampler.draw(seed, 1);
    std::vector<std::string> labels;
    for (const auto& g : draw) labels.push_back(g.label);
    const auto streams = group_streams(labels);
    out.estimate.assign(G, std::vector<std::vector<double>>(M));
    out.bse.assign(G, std::vector<std::vector<double>>(M, std::vector<double>(R, std::nan(""))));
    std::vector<std::vector<BootstrapRun>> runs(M, std::vector<BootstrapRun>(G));
    for (std::size_t g = 0; g < G; ++g) {
      for (std::size_t m = 0; m < M; ++m) {
        EstimatorConfig cfg = opt.proposed;
        cfg.method = methods()[m];
        const Engine engine(methods()[m] == Method::oracle ? draw[g].complete : draw[g].observed,
                            opt.ranges, cfg);
        if (!opt.bootstrap) {
          out.estimate[g][m] = engine.evaluate().mu;
          continue;
        }
        BootstrapOptions bo;
        bo.B = opt.B;
        bo.seed = seed;
        bo.stream = streams[g];
        bo.threads = 1;
        runs[m][g] = bootstrap_run(engine, bo);
        out.estimate[g][m] = runs[m][g].estimate;
        for (std::size_t r = 0; r < R; ++r) out.bse[g][m][r] = tir_ipw::summarize(runs[m][g], r).se;
      }
    }
    if (opt.bootstrap) {
      auto pvals = [&](std::pair<std::size_t, std::size_t> pair) {
        std::vector<std::vector<double>> p(M, std::vector<double>(R));
        const std::vector<std::string> lab{labels[pair.first], labels[pair.second]};
        for (std::size_t m = 0; m < M; ++m) {
          const std::vector<BootstrapRun> two{runs[m][pair.first], runs[m][pair.second]};
          for (std::size_t r = 0; r < R; ++r) p[m][r] = wald_from_runs(two, lab, r).p_value;
        }
        return p;
      };
      if (opt.size_pair.second < G) out.p_size = pvals(opt.size_pair);
      if (opt.power_pair.second < G) out.p_power = pvals(opt.power_pair);
    }
    out.ok = true;
  } catch (const Error& e) {
    out.error = e.what();
  }
  return out;
}

struct Cell {
  std::string group;
  Method method = Method::oracle;
  TargetRange range;
  double avg_est = 0.0;
  double rel_bias = 0.0;
  double esd = 0.0;
  double mean_bse = std::nan("");
};

struct TestCell {
  std::string comparison;
  Method method = Method::oracle;
  TargetRange range;
  double rejection_rate = std::nan("");
};

struct Summary {
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<Cell> cells;
  std::vector<TestCell> tests;

  const Cell& cell(std::size_t g, Method m, std::size_t r, std::size_t R) const {
    std::size_t mi = 0;
    while (methods()[mi] != m) ++mi;
    return cells[(g * methods().size() + mi) * R + r];
  }
  const TestCell& test(const std::string& cmp, Method m, std::size_t r) const {
    for (const auto& t : tests) {
      if (t.comparison == cmp && t.method == m && t.range == range_at(r)) return t;
    }
    throw InputError("no test cell " + cmp);
  }
  std::vector<TargetRange> ranges_;
  const TargetRange& range_at(std::size_t r) const { return ranges_.at(r); }
};

/// AvgEst, RelBias against the average oracle estimate, ESD, mean BSE, and rejection rates
/// over the first `use` successful replicates (all when 0).
inline Summary summarize(const std::vector<Replicate>& reps, const sim::ScenarioConfig& config,
                         const Options& opt, std::size_t use = 0) {
  Summary s;
  s.ranges_ = opt.ranges;
  std::vector<const Replicate*> ok;
  for (const auto& r : reps) {
    if (r.ok) {
      if (use == 0 || ok.size() < use) ok.push_back(&r);
    } else if (use == 0 || ok.size() < use) {
      ++s.failures;
    }
  }
  s.reps = ok.size();
  const auto G = config.groups.size();
  const auto M = methods().size();
  const auto R = opt.ranges.size();
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t r = 0; r < R; ++r) {
        Cell c;
        c.group = config.groups[g].label;
        c.method = methods()[m];
        c.range = opt.ranges[r];
        std::vector<double> v, b;
        double oracle = 0.0;
        for (const auto* rep : ok) {
          v.push_back(rep->estimate[g][m][r]);
          if (!rep->bse.empty()) b.push_back(rep->bse[g][m][r]);
          oracle += rep->estimate[g][0][r];
        }
        if (v.empty()) continue;
        oracle /= static_cast<double>(ok.size());
        double sum = 0.0;
        for (double x : v) sum += x;
        c.avg_est = sum / static_cast<double>(v.size());
        c.rel_bias = oracle > 0.0 ? std::abs(c.avg_est - oracle) / oracle : std::nan("");
        c.esd = sample_sd(v);
        if (!b.empty()) {
          double sb = 0.0;
          for (double x : b) sb += x;
          c.mean_bse = sb / static_cast<double>(b.size());
        }
        s.cells.push_back(c);
      }
    }
  }
  auto rates = [&](const std::string& name, auto member) {
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t r = 0; r < R; ++r) {
        TestCell t;
        t.comparison = name;
        t.method = methods()[m];
        t.range = opt.ranges[r];
        std::size_t n = 0, reject = 0;
        for (const auto* rep : ok) {
          const auto& p = rep->*member;
          if (p.empty()) continue;
          ++n;
          reject += p[m][r] < opt.alpha;
        }
        if (n) t.rejection_rate = static_cast<double>(reject) / static_cast<double>(n);
        s.tests.push_back(t);
      }
    }
  };
  if (opt.bootstrap && G > std::max(opt.size_pair.first, opt.size_pair.second)) {
    rates("size:" + config.groups[opt.size_pair.first].label + "-" + config.groups[opt.size_pair.second].label,
          &Replicate::p_size);
  }
  if (opt.bootstrap && G > std::max(opt.power_pair.first, opt.power_pair.second)) {
    rates("power:" + config.groups[opt.power_pair.first].label + "-" +
              config.groups[opt.power_pair.second].label,
          &Replicate::p_power);
  }
  return s;
}

/// Runs every replicate; aborts when more than the allowed fraction fail.
inline std::vector<Replicate> run(const sim::ScenarioConfig& config, const Options& opt,
                                  std::vector<std::string>* log = nullptr) {
  if (opt.reps < 1) throw InputError("need at least one replicate");
  const sim::ScenarioSampler sampler(config);
  std::vector<Replicate> reps(opt.reps);
  std::atomic<std::size_t> done{0};
  parallel_for(opt.reps, [&](std::size_t k) {
    reps[k] = run_replicate(sampler, k, opt);
    const auto d = ++done;
    if (opt.progress) opt.progress(d, opt.reps);
  }, opt.threads ? opt.threads : thread_count());
  std::size_t failed = 0;
  for (const auto& r : reps) {
    if (!r.ok) {
      ++failed;
      if (log) log->push_back("replicate " + std::to_string(r.index) + ": " + r.error);
    }
  }
  if (static_cast<double>(failed) > opt.max_failure_fraction * static_cast<double>(opt.reps)) {
    throw Error("Monte Carlo: " + std::to_string(failed) + " of " + std::to_string(opt.reps) +
                " replicates failed");
  }
  return reps;
}

inline void write_summary_csv(std::ostream& os, const Summary& s) {
  os << "kind,group,method,range,avg_est,rel_bias,esd,mean_bse,rejection_rate,reps\n";
  for (const auto& c : s.cells) {
    os << "estimate," << c.group << ',' << to_string(c.method) << ",\"" << c.range.label() << "\","
       << csv::format(c.avg_est) << ',' << csv::format(c.rel_bias) << ',' << csv::format(c.esd) << ','
       << csv::format(c.mean_bse) << ",," << s.reps << '\n';
  }
  for (const auto& t : s.tests) {
    os << "test," << t.comparison << ',' << to_string(t.method) << ",\"" << t.range.label() << "\",,,,,"
       << csv::format(t.rejection_rate) << ',' << s.reps << '\n';
  }
}

inline void write_replicates_csv(std::ostream& os, const std::vector<Replicate>& reps,
                                 const sim::ScenarioConfig& config, const Options& opt) {
  os << "replicate,ok,group,method,range,estimate,bse\n";
  for (const auto& rep : reps) {
    if (!rep.ok) {
      os << rep.index << ",0,,,,,\n";
      continue;
    }
    for (std::size_t g = 0; g < config.groups.size(); ++g) {
      for (std::size_t m = 0; m < methods().size(); ++m) {
        for (std::size_t r = 0; r < opt.ranges.size(); ++r) {
          os << rep.index << ",1," << config.groups[g].label << ',' << to_string(methods()[m]) << ",\""
             << opt.ranges[r].label() << "\"," << csv::format(rep.estimate[g][m][r]) << ','
             << csv::format(rep.bse.empty() ? std::nan("") : rep.bse[g][m][r]) << '\n';
        }
      }
    }
  }
}

}  // namespace tir_ipw::mc
