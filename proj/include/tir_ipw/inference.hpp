#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tir_ipw/errors.hpp"
#include "tir_ipw/parallel.hpp"
#include "tir_ipw/pipeline.hpp"
#include "tir_ipw/rng.hpp"

namespace tir_ipw {

/// Q(df/2, x/2), the upper tail of the chi-square distribution.
inline double chi_square_upper_tail(double x, int df) {
  if (df < 1) throw InputError("chi-square degrees of freedom must be positive");
  if (!(x >= 0.0)) throw InputError("chi-square statistic must be non-negative");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

inline constexpr double kNormal975 = 1.959963984540054;

struct BootstrapResult {
  double estimate = 0.0;
  std::vector<double> replicates;
  double se = 0.0;
  std::pair<double, double> ci_percentile{0.0, 0.0};
  std::pair<double, double> ci_normal{0.0, 0.0};
  std::size_t failures = 0;
  std::size_t B = 0;
};

/// All replicates of one engine, indexed by replicate number; failed ones are empty.
struct BootstrapRun {
  std::vector<double> estimate;
  std::vector<std::optional<std::vector<double>>> replicates;
  std::size_t failures = 0;
  std::vector<std::string> failure_reasons;
};

struct BootstrapOptions {
  std::size_t B = 200;
  std::uint64_t seed = 1;
  /// Sub-stream key, so independent groups can share one user seed.
  std::uint64_t stream = 0;
  double max_failure_fraction = 0.10;
  unsigned threads = 0;
};

/// Subject counts of one resample drawn with replacement.
inline std::vector<double> resample_multiplicity(std::size_t n, Rng& rng) {
  std::vector<double> m(n, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    auto i = static_cast<std::size_t>(uniform_open(rng) * static_cast<double>(n));
    if (i >= n) i = n - 1;
    m[i] += 1.0;
  }
  return m;
}

/// Nonparametric bootstrap over subjects; every replicate reruns the full estimator,
/// including the Cox fit. Replicate b uses a generator derived from (seed, stream, b).
inline BootstrapRun bootstrap_run(const Engine& engine, const BootstrapOptions& opt) {
  if (opt.B < 2) throw InputError("bootstrap needs B >= 2");
  BootstrapRun run;
  run.estimate = with_stage("original data", [&] { return engine.evaluate().mu; });
  const auto n = engine.size();
  run.replicates.resize(opt.B);
  std::vector<std::string> reasons(opt.B);
  parallel_for(
      opt.B,
      [&](std::size_t b) {
        auto rng = make_rng(opt.seed, {opt.stream, static_cast<std::uint64_t>(b)});
        const auto mult = resample_multiplicity(n, rng);
        try {
          run.replicates[b] = engine.evaluate(mult).mu;
        } catch (const PositivityError& e) {
          reasons[b] = e.what();
        } catch (const FitError& e) {
          reasons[b] = e.what();
        }
      },
      opt.threads ? opt.threads : thread_count());
  for (std::size_t b = 0; b < opt.B; ++b) {
    if (!run.replicates[b]) {
      ++run.failures;
      run.failure_reasons.push_back("replicate " + std::to_string(b) + ": " + reasons[b]);
    }
  }
  if (static_cast<double>(run.failures) > opt.max_failure_fraction * static_cast<double>(opt.B)) {
    throw Error("bootstrap: " + std::to_string(run.failures) + " of " + std::to_string(opt.B) +
                " resamples were not estimable (limit " +
                std::to_string(static_cast<int>(opt.max_failure_fraction * 100)) +
                "%); first: " + run.failure_reasons.front());
  }
  return run;
}

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// SE and 95% intervals for range r of a run. Percentile endpoints are order statistics.
inline BootstrapResult summarize(const BootstrapRun& run, std::size_t r) {
  BootstrapResult out;
  out.estimate = run.estimate.at(r);
  out.B = run.replicates.size();
  out.failures = run.failures;
  for (const auto& rep : run.replicates) {
    if (rep) out.replicates.push_back((*rep)[r]);
  }
  out.se = sample_sd(out.replicates);
  auto sorted = out.replicates;
  std::sort(sorted.begin(), sorted.end());
  const auto R = sorted.size();
  if (R > 0) {
    const double k_real = std::ceil(0.025 * static_cast<double>(R)) - 1.0;
    const auto k = static_cast<std::size_t>(std::max(0.0, k_real));
    out.ci_percentile = {sorted[k], sorted[R - 1 - k]};
  }
  out.ci_normal = {out.estimate - kNormal975 * out.se, out.estimate + kNormal975 * out.se};
  return out;
}

inline std::vector<BootstrapResult> bootstrap_mu(const Engine& engine, const BootstrapOptions& opt) {
  const auto run = bootstrap_run(engine, opt);
  std::vector<BootstrapResult> out;
  for (std::size_t r = 0; r < engine.ranges().size(); ++r) out.push_back(summarize(run, r));
  return out;
}

/// Attaches bootstrap SE and intervals to point estimates (percentile CI as `ci`).
inline void attach(std::vector<TirEstimate>& estimates, std::span<const BootstrapResult> boot) {
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    estimates[r].se = boot[r].se;
    estimates[r].ci = boot[r].ci_percentile;
    estimates[r].ci_normal = boot[r].ci_normal;
  }
}

struct WaldTest {
  TargetRange range;
  std::vector<std::string> groups;
  std::vector<double> estimates;
  std::vector<double> ses;
  Eigen::VectorXd contrast;
  Eigen::MatrixXd covariance;
  double statistic = 0.0;
  int df = 0;
  double p_value = 1.0;
  std::size_t B = 0;
  std::uint64_t seed = 0;
};

/// Stream key per group: label hash plus how many earlier groups carry the same label.
inline std::vector<std::uint64_t> group_streams(std::span<const std::string> labels) {
  std::vector<std::uint64_t> out;
  for (std::size_t g = 0; g < labels.size(); ++g) {
    std::uint64_t occurrence = 0;
    for (std::size_t h = 0; h < g; ++h) occurrence += labels[h] == labels[g];
    out.push_back(derive_seed(hash_label(labels[g]), {occurrence}));
  }
  return out;
}

/// Wald statistic from per-group bootstrap runs over the same ranges.
inline WaldTest wald_from_runs(std::span<const BootstrapRun> runs, std::span<const std::string> labels,
                               std::size_t r) {
  const auto K = runs.size();
  if (K < 2) throw InputError("comparison needs at least two groups");
  WaldTest t;
  t.groups.assign(labels.begin(), labels.end());
  t.df = static_cast<int>(K - 1);
  t.B = runs.front().replicates.size();
  for (const auto& run : runs) {
    t.estimates.push_back(run.estimate.at(r));
    t.ses.push_back(summarize(run, r).se);
  }
  const auto d = static_cast<Eigen::Index>(K - 1);
  t.contrast.resize(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    t.contrast[k] = t.estimates[static_cast<std::size_t>(k) + 1] - t.estimates[0];
  }
  // paired replicate differences; a replicate failed in any group is dropped
  std::vector<Eigen::VectorXd> diffs;
  for (std::size_t b = 0; b < t.B; ++b) {
    bool ok = true;
    for (const auto& run : runs) ok = ok && b < run.replicates.size() && run.replicates[b].has_value();
    if (!ok) continue;
    Eigen::VectorXd v(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      v[k] = (*runs[static_cast<std::size_t>(k) + 1].replicates[b])[r] - (*runs[0].replicates[b])[r];
    }
    diffs.push_back(std::move(v));
  }
  if (diffs.size() < 2) throw Error("too few joint bootstrap replicates for the covariance");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : diffs) mean += v;
  mean /= static_cast<double>(diffs.size());
  t.covariance = Eigen::MatrixXd::Zero(d, d);
  for (const auto& v : diffs) t.covariance += (v - mean) * (v - mean).transpose();
  t.covariance /= static_cast<double>(diffs.size() - 1);
  t.covariance = 0.5 * (t.covariance + t.covariance.transpose()).eval();

  if ((t.contrast.array() == 0.0).all()) {
    t.statistic = 0.0;
    t.p_value = 1.0;
    return t;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.covariance);
  const double top = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(top > 0.0) || es.eigenvalues()(0) <= 1e-12 * top) {
    throw Error("bootstrap covariance of the group differences is singular; increase B");
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(t.covariance);
  t.statistic = std::max(0.0, t.contrast.dot(ldlt.solve(t.contrast)));
  t.p_value = chi_square_upper_tail(t.statistic, t.df);
  return t;
}

/// Per-range Wald tests of equal mean TIR across groups, each group bootstrapped on its
/// own stream derived from (seed, label).
inline std::vector<WaldTest> wald_test(std::span<const Engine> groups, std::span<const std::string> labels,
                                       std::size_t B, std::uint64_t seed) {
  if (groups.size() < 2) throw InputError("comparison needs at least two groups");
  if (labels.size() != groups.size()) throw InputError("one label per group required");
  const auto& grid = groups.front().cohort().grid();
  for (const auto& g : groups) {
    if (!(g.cohort().grid() == grid)) throw InputError("groups do not share a time grid");
    if (g.ranges() != groups.front().ranges()) throw InputError("groups do not share target ranges");
  }
  const auto streams = group_streams(labels);
  std::vector<BootstrapRun> runs;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    BootstrapOptions opt;
    opt.B = B;
    opt.seed = seed;
    opt.stream = streams[g];
    runs.push_back(with_stage(labels[g].c_str(), [&] { return bootstrap_run(groups[g], opt); }));
  }
  std::vector<WaldTest> out;
  for (std::size_t r = 0; r < groups.front().ranges().size(); ++r) {
    auto t = wald_from_runs(runs, labels, r);
    t.range = groups.front().ranges()[r];
    t.seed = seed;
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tir_ipw
