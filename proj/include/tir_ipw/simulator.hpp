#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/errors.hpp"
#include "tir_ipw/estimators.hpp"
#include "tir_ipw/grid.hpp"
#include "tir_ipw/parallel.hpp"
#include "tir_ipw/range.hpp"
#include "tir_ipw/rng.hpp"

namespace tir_ipw::sim {

/// k(t,t') = sigma^2 exp(-(2/l^2) sin^2(pi |t-t'| / p)), t in minutes.
struct KernelSpec {
  double sigma = 62.0;
  double length_scale = 1.0;
  double period = 1440.0;
  /// Diagonal jitter as a fraction of sigma^2.
  double jitter = 1e-8;

  double operator()(double t, double u) const {
    const double s = std::sin(std::numbers::pi * std::abs(t - u) / period);
    return sigma * sigma * std::exp(-2.0 / (length_scale * length_scale) * s * s);
  }

  void validate() const {
    if (!(sigma > 0.0 && length_scale > 0.0 && period > 0.0 && jitter > 0.0)) {
      throw InputError("kernel parameters must all be positive");
    }
  }
};

/// level + decay_amplitude * exp(-decay_rate * t) + oscillation_amplitude * sin(2 pi t + phase),
/// t in days.
struct ParametricMean {
  double level = 160.0;
  double decay_amplitude = 40.0;
  double decay_rate = 1.0;
  double oscillation_amplitude = 0.0;
  double phase = 0.0;

  double at_days(double t) const {
    return level + decay_amplitude * std::exp(-decay_rate * t) +
           oscillation_amplitude * std::sin(2.0 * std::numbers::pi * t + phase);
  }
};

struct TabulatedMean {
  std::vector<double> values;
};

using MeanFunction = std::variant<ParametricMean, TabulatedMean>;

inline std::vector<double> evaluate_mean(const MeanFunction& mean, const TimeGrid& grid) {
  std::vector<double> out(grid.size());
  if (const auto* p = std::get_if<ParametricMean>(&mean)) {
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = p->at_days(grid[j] / kMinutesPerDay);
  } else {
    const auto& v = std::get<TabulatedMean>(mean).values;
    if (v.size() != grid.size()) {
      throw InputError("tabulated mean has " + std::to_string(v.size()) + " values, grid has " +
                       std::to_string(grid.size()));
    }
    out = v;
  }
  for (double x : out) {
    if (!std::isfinite(x)) throw InputError("mean function is not finite on the grid");
  }
  return out;
}

// --- follow-up laws -----------------------------------------------------------

/// Hazard a t^{-b} exp(Z(t)'beta), t in days, Z = ((prev-day mean - z1_reference)/100, Z2).
struct CoxFollowup {
  double a = 0.25;
  double b = 0.75;
  std::vector<double> beta{2.0, 2.0};
  double z2_low = -0.5;
  double z2_high = 0.5;
  /// Subtracted from the previous-day mean (mg/dL) after day 1; 0 reproduces the raw covariate.
  double z1_reference = 0.0;
};

/// Mixture of uniforms in days.
struct MixtureFollowup {
  std::vector<double> weights{0.8, 0.2};
  std::vector<std::pair<double, double>> components{{0.0, 2.0}, {2.0, 9.0}};
};

/// Piecewise-linear CDF through (days, cdf) knots, starting at cdf 0 and ending at 1.
struct TabulatedFollowup {
  std::vector<double> days;
  std::vector<double> cdf;
};

/// C = s exp(-zeta + eps); eps logistic with probability p_mix, else standard extreme value.
struct TransformationFollowup {
  double s = 8.0;
  double p_mix = 1.0;
  double zeta_probability = 0.5;
};

/// Every subject followed past the horizon.
struct NoFollowupLoss {};

using FollowupLaw =
    std::variant<NoFollowupLoss, CoxFollowup, MixtureFollowup, TabulatedFollowup, TransformationFollowup>;

inline std::string mode_name(const FollowupLaw& law) {
  switch (law.index()) {
    case 0: return "none";
    case 1: return "cox";
    case 2: return "mixture";
    case 3: return "tabulated_cdf";
    default: return "transformation";
  }
}

struct MissingnessSpec {
  double intermittent_start_scale = 3424.0;
  double gap_low = 10.0;
  double gap_high = 70.0;
  bool intermittent = true;
  FollowupLaw monotone = CoxFollowup{};

  void validate() const {
    if (!(intermittent_start_scale > 0.0)) throw InputError("gap start scale must be positive");
    if (!(gap_low > 0.0 && gap_low < gap_high)) throw InputError("need 0 < gap_low < gap_high");
  }
};

struct GroupSpec {
  std::string label;
  std::size_t n = 200;
  MeanFunction mean = ParametricMean{};
  MissingnessSpec missing;
  /// Mean shift (mg/dL) per unit of the binary zeta (transformation-model scenarios).
  double zeta_shift = 0.0;
};

struct ScenarioConfig {
  TimeGrid grid{5.0, 7.0};
  KernelSpec kernel;
  std::vector<GroupSpec> groups;
  std::uint64_t seed = 1;
  std::size_t ground_truth_n = 10000;

  void validate() const {
    kernel.validate();
    if (groups.empty()) throw InputError("scenario has no groups");
    for (std::size_t g = 0; g < groups.size(); ++g) {
      if (groups[g].n < 1) throw InputError("group " + groups[g].label + " needs n >= 1");
      groups[g].missing.validate();
      for (std::size_t h = 0; h < g; ++h) {
        if (groups[h].label == groups[g].label) throw InputError("duplicate group label " + groups[g].label);
      }
    }
  }
};

// --- Gaussian process ----------------------------------------------------------

/// Draws zero-mean paths of the kernel on a grid.
///
/// When the period is a whole number of steps the path repeats exactly with that
/// period (the kernel forces it), so only one period is factorized and then tiled.
class GpSampler {
 public:
  GpSampler(const KernelSpec& kernel, const TimeGrid& grid) : grid_(grid) {
    kernel.validate();
    const double per = kernel.period / grid.step();
    const bool periodic = std::abs(per - std::round(per)) < 1e-9 && std::round(per) >= 1.0;
    block_ = periodic ? std::min<std::size_t>(grid.size(), static_cast<std::size_t>(std::round(per)))
                      : grid.size();
    Eigen::MatrixXd k(static_cast<Eigen::Index>(block_), static_cast<Eigen::Index>(block_));
    for (std::size_t a = 0; a < block_; ++a) {
      for (std::size_t b = 0; b < block_; ++b) {
        k(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = kernel(grid[a], grid[b]);
      }
    }
    const double var = kernel.sigma * kernel.sigma;
    double jitter = kernel.jitter;
    for (;;) {
      Eigen::MatrixXd kj = k;
      kj.diagonal().array() += jitter * var;
      Eigen::LLT<Eigen::MatrixXd> llt(kj);
      if (llt.info() == Eigen::Success) {
        lower_ = llt.matrixL();
        jitter_used_ = jitter;
        break;
      }
      jitter *= 10.0;
      if (jitter > 1e-4 * (1.0 + 1e-12)) {
        throw Error("kernel matrix factorization failed even with relative jitter 1e-4");
      }
    }
  }

  double jitter_used() const { return jitter_used_; }
  std::size_t block_size() const { return block_; }
  /// Var of the sampled value at grid index j (diagonal of L L').
  double implied_variance(std::size_t j) const {
    return lower_.row(static_cast<Eigen::Index>(j % block_)).squaredNorm();
  }

  void draw(Rng& rng, std::span<double> out) const {
    std::normal_distribution<double> normal;
    Eigen::VectorXd z(static_cast<Eigen::Index>(block_));
    for (Eigen::Index a = 0; a < z.size(); ++a) z[a] = normal(rng);
    const Eigen::VectorXd x = lower_.triangularView<Eigen::Lower>() * z;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = x[static_cast<Eigen::Index>(j % block_)];
  }

 private:
  TimeGrid grid_;
  std::size_t block_ = 0;
  Eigen::MatrixXd lower_;
  double jitter_used_ = 0.0;
};

inline Trajectory sample_gp_trajectory(const std::vector<double>& mean, const GpSampler& gp,
                                       const TimeGrid& grid, Rng& rng, std::string id = "s") {
  std::vector<double> y(grid.size());
  gp.draw(rng, y);
  for (std::size_t j = 0; j < y.size(); ++j) y[j] += mean[j];
  return Trajectory::complete(std::move(id), grid, std::move(y));
}

inline Trajectory sample_gp_trajectory(const MeanFunction& mean, const KernelSpec& kernel,
                                       const TimeGrid& grid, Rng& rng) {
  GpSampler gp(kernel, grid);
  return sample_gp_trajectory(evaluate_mean(mean, grid), gp, grid, rng);
}

// --- intermittent gaps ---------------------------------------------------------

/// Gap intervals [start, end) in minutes covering [0, horizon); each start is an
/// exponential offset from the previous gap's end.
inline std::vector<std::pair<double, double>> draw_gaps(const MissingnessSpec& spec, double horizon,
                                                        Rng& rng) {
  std::vector<std::pair<double, double>> gaps;
  double t = 0.0;
  for (;;) {
    const double start = t - spec.intermittent_start_scale * std::log(uniform_open(rng));
    if (!(start < horizon)) break;
    const double end = start + uniform(rng, spec.gap_low, spec.gap_high);
    gaps.emplace_back(start, end);
    t = end;
  }
  return gaps;
}

/// Clears every grid interval [t_j, t_j + step) that intersects a gap.
inline void apply_gaps(Mask& mask, const TimeGrid& grid,
                       std::span<const std::pair<double, double>> gaps) {
  for (const auto& [start, end] : gaps) {
    const auto first = grid.interval_index(start);
    const auto last = static_cast<std::size_t>(std::ceil(end / grid.step()));
    for (auto j = first; j < last && j < mask.size(); ++j) mask[j] = 0;
  }
}

inline Trajectory inject_intermittent(const Trajectory& traj, const MissingnessSpec& spec, Rng& rng) {
  const auto& grid = traj.grid();
  Mask mask(traj.intermittent_mask().begin(), traj.intermittent_mask().end());
  if (spec.intermittent) {
    const auto gaps = draw_gaps(spec, grid.tau_minutes() + grid.step(), rng);
    apply_gaps(mask, grid, gaps);
  }
  std::vector<double> y(traj.glucose().begin(), traj.glucose().end());
  return Trajectory(traj.subject_id(), grid, std::move(y), std::move(mask), traj.followup_minutes());
}

// --- follow-up draws -------------------------------------------------------------

/// Cumulative baseline hazard a/(1-b) t^{1-b} and its inverse, t in days.
struct PowerBaseline {
  double c;
  double e;
  PowerBaseline(double a, double b) : c(a / (1.0 - b)), e(1.0 - b) {
    if (!(a > 0.0) || !(b >= 0.0 && b < 1.0)) throw InputError("baseline hazard needs a > 0, 0 <= b < 1");
  }
  double cumulative(double t_days) const { return t_days <= 0.0 ? 0.0 : c * std::pow(t_days, e); }
  double inverse(double h) const { return std::pow(h / c, 1.0 / e); }
};

/// C (minutes) from the proportional-hazards law given Z1 on the grid (already on the
/// hazard's scale) and a fixed Z2. The covariate is piecewise constant, so the
/// cumulative hazard is inverted exactly inside each grid interval. Returns tau + step
/// when it does not cross -log U by tau.
inline double sample_C_cox(std::span<const double> z1, double z2, const CoxFollowup& law,
                           const TimeGrid& grid, Rng& rng) {
  const PowerBaseline base(law.a, law.b);
  const double target = -std::log(uniform_open(rng));
  const double b1 = law.beta.size() > 0 ? law.beta[0] : 0.0;
  const double b2 = law.beta.size() > 1 ? law.beta[1] : 0.0;
  double cum = 0.0;
  for (std::size_t j = 0; j + 1 < grid.size(); ++j) {
    const double t0 = grid[j] / kMinutesPerDay;
    const double t1 = grid[j + 1] / kMinutesPerDay;
    const double rate = std::exp(b1 * z1[j] + b2 * z2);
    const double l0 = base.cumulative(t0);
    const double inc = rate * (base.cumulative(t1) - l0);
    if (cum + inc >= target) {
      const double t = base.inverse(l0 + (target - cum) / rate) * kMinutesPerDay;
      return std::clamp(t, grid[j], grid[j + 1]);
    }
    cum += inc;
  }
  return grid.tau_minutes() + grid.step();
}

/// Z1 for the hazard: previous-day mean of the (intermittently masked) path, shifted.
inline std::vector<double> hazard_z1(const Trajectory& traj, double z1_reference) {
  auto z = prev_day_mean_series(traj);
  const auto& grid = traj.grid();
  for (std::size_t j = 0; j < z.size(); ++j) {
    if (grid[j] >= kMinutesPerDay) z[j] -= z1_reference / 100.0;
  }
  return z;
}

/// Draw from a mixture of uniforms (days).
inline double sample_C_noninformative(const MixtureFollowup& law, Rng& rng) {
  double total = 0.0;
  for (double w : law.weights) total += w;
  double u = uniform_open(rng) * total;
  const double v = uniform_open(rng);
  for (std::size_t k = 0; k < law.weights.size(); ++k) {
    if (u < law.weights[k] || k + 1 == law.weights.size()) {
      const auto [lo, hi] = law.components[k];
      return lo + (hi - lo) * v;
    }
    u -= law.weights[k];
  }
  return 0.0;
}

inline double sample_C_tabulated(const TabulatedFollowup& law, Rng& rng) {
  const double u = uniform_open(rng);
  for (std::size_t k = 1; k < law.cdf.size(); ++k) {
    if (u <= law.cdf[k]) {
      const double f = (u - law.cdf[k - 1]) / (law.cdf[k] - law.cdf[k - 1]);
      return law.days[k - 1] + f * (law.days[k] - law.days[k - 1]);
    }
  }
  return law.days.back();
}

/// s exp(-zeta + eps) days. The mixture component is chosen before eps is drawn.
inline double sample_C_transformation(int zeta, double s, double p_mix, Rng& rng) {
  if (!(s > 0.0)) throw InputError("transformation scale s must be positive");
  const bool logistic = uniform_open(rng) < p_mix;
  const double u = uniform_open(rng);
  const double eps = logistic ? std::log(u / (1.0 - u)) : std::log(-std::log(u));
  return s * std::exp(-static_cast<double>(zeta) + eps);
}

// --- scenarios -------------------------------------------------------------------

struct GroupDraw {
  std::string label;
  Cohort observed;
  Cohort complete;
  /// Covariate-free subject traits of the retained subjects, in cohort order.
  std::vector<double> z2;
  std::vector<int> zeta;
  /// Subjects followed for less than the minimum or without any reading; dropped from
  /// `observed` as ingestion would drop them.
  std::vector<std::string> excluded;
};

struct GroupTruth {
  std::string label;
  std::vector<double> mu;
  std::vector<double> mc_se;
  std::size_t n = 0;
};

struct GroundTruth {
  std::vector<TargetRange> ranges;
  std::vector<GroupTruth> groups;
};

/// Fixed per-scenario state: mean curves and GP factors.
class ScenarioSampler {
 public:
  explicit ScenarioSampler(ScenarioConfig config) : config_(std::move(config)) {
    config_.validate();
    gp_ = std::make_shared<const GpSampler>(config_.kernel, config_.grid);
    for (const auto& g : config_.groups) means_.push_back(evaluate_mean(g.mean, config_.grid));
  }

  const ScenarioConfig& config() const { return config_; }
  const GpSampler& gp() const { return *gp_; }
  /// Defaults to one grid step, matching ingestion.
  void set_min_followup_minutes(double m) { min_followup_minutes_ = m; }

  struct Subject {
    Trajectory complete;
    Trajectory observed;
    double z2 = 0.0;
    int zeta = 0;
  };

  /// One subject of group g from its own stream (seed, label, purpose, index).
  Subject subject(std::size_t g, std::size_t i, std::uint64_t seed, std::uint64_t purpose,
                  bool need_observed = true) const {
    const auto& spec = config_.groups[g];
    const auto& grid = config_.grid;
    auto rng = make_rng(seed, {hash_label(spec.label), purpose, static_cast<std::uint64_t>(i)});
    Subject s;
    const auto* tr = std::get_if<TransformationFollowup>(&spec.missing.monotone);
    if (tr) s.zeta = uniform_open(rng) < tr->zeta_probability ? 1 : 0;
    std::vector<double> y(grid.size());
    gp_->draw(rng, y);
    const double shift = spec.zeta_shift * s.zeta;
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += means_[g][j] + shift;
    const std::string id = spec.label + "-" + std::to_string(i + 1);
    s.complete = Trajectory::complete(id, grid, std::move(y));
    if (!need_observed) return s;

    const auto gapped = inject_intermittent(s.complete, spec.missing, rng);
    double c_minutes = grid.tau_minutes() + grid.step();
    std::visit(
        [&](const auto& law) {
          using T = std::decay_t<decltype(law)>;
          if constexpr (std::is_same_v<T, CoxFollowup>) {
            s.z2 = uniform(rng, law.z2_low, law.z2_high);
            const auto z1 = hazard_z1(gapped, law.z1_reference);
            c_minutes = sample_C_cox(z1, s.z2, law, grid, rng);
          } else if constexpr (std::is_same_v<T, MixtureFollowup>) {
            c_minutes = sample_C_noninformative(law, rng) * kMinutesPerDay;
          } else if constexpr (std::is_same_v<T, TabulatedFollowup>) {
            c_minutes = sample_C_tabulated(law, rng) * kMinutesPerDay;
          } else if constexpr (std::is_same_v<T, TransformationFollowup>) {
            c_minutes = sample_C_transformation(s.zeta, law.s, law.p_mix, rng) * kMinutesPerDay;
          }
        },
        spec.missing.monotone);
    std::vector<double> gy(gapped.glucose().begin(), gapped.glucose().end());
    Mask m(gapped.intermittent_mask().begin(), gapped.intermittent_mask().end());
    s.observed = Trajectory(id, grid, std::move(gy), std::move(m), c_minutes).masked();
    return s;
  }

  /// Observed and complete cohorts of every group for one dataset.
  std::vector<GroupDraw> draw(std::uint64_t seed, unsigned threads = 0) const {
    std::vector<GroupDraw> out;
    for (std::size_t g = 0; g < config_.groups.size(); ++g) {
      const auto& spec = config_.groups[g];
      std::vector<Subject> subjects(spec.n);
      parallel_for(spec.n, [&](std::size_t i) { subjects[i] = subject(g, i, seed, 0); },
                   threads ? threads : thread_count());
      GroupDraw d;
      d.label = spec.label;
      std::vector<Trajectory> obs, comp;
      std::vector<CovariateProcess> cov;
      const double min_followup = min_followup_minutes_.value_or(config_.grid.step());
      for (auto& s : subjects) {
        comp.push_back(std::move(s.complete));
        if (s.observed.followup_minutes() < min_followup || s.observed.available_count() == 0) {
          d.excluded.push_back(s.observed.subject_id());
          continue;
        }
        cov.push_back(history_covariates(s.observed, follow_covariate(spec, s)));
        obs.push_back(std::move(s.observed));
        d.z2.push_back(s.z2);
        d.zeta.push_back(s.zeta);
      }
      d.observed = Cohort(config_.grid, std::move(obs), std::move(cov), spec.label);
      d.complete = Cohort(config_.grid, std::move(comp), {}, spec.label);
      out.push_back(std::move(d));
    }
    return out;
  }

  /// Average subject-level oracle TIR over N fresh complete paths per group.
  GroundTruth ground_truth(std::span<const TargetRange> ranges, std::size_t N = 0,
                           unsigned threads = 0) const {
    if (N == 0) N = config_.ground_truth_n;
    GroundTruth t;
    t.ranges.assign(ranges.begin(), ranges.end());
    const auto R = ranges.size();
    for (std::size_t g = 0; g < config_.groups.size(); ++g) {
      std::vector<double> w(N * R);
      parallel_for(N, [&](std::size_t i) {
        const auto s = subject(g, i, config_.seed, kTruthStream, false);
        for (std::size_t r = 0; r < R; ++r) w[i * R + r] = subject_tir_oracle(s.complete, ranges[r]);
      }, threads ? threads : thread_count());
      GroupTruth gt;
      gt.label = config_.groups[g].label;
      gt.n = N;
      for (std::size_t r = 0; r < R; ++r) {
        double s = 0.0, ss = 0.0;
        for (std::size_t i = 0; i < N; ++i) s += w[i * R + r];
        const double mean = s / static_cast<double>(N);
        for (std::size_t i = 0; i < N; ++i) ss += (w[i * R + r] - mean) * (w[i * R + r] - mean);
        gt.mu.push_back(mean);
        gt.mc_se.push_back(std::sqrt(ss / static_cast<double>(N - 1) / static_cast<double>(N)));
      }
      t.groups.push_back(std::move(gt));
    }
    return t;
  }

  static constexpr std::uint64_t kTruthStream = 0x7275746800000001ULL;

  static bool has_follow_covariate(const GroupSpec& spec) {
    return std::holds_alternative<TransformationFollowup>(spec.missing.monotone) ||
           std::holds_alternative<CoxFollowup>(spec.missing.monotone);
  }

  /// Subject-level covariates entering the fitted model next to Z1 (none for laws without one).
  static std::vector<double> follow_covariate(const GroupSpec& spec, const Subject& s) {
    if (std::holds_alternative<TransformationFollowup>(spec.missing.monotone)) return {double(s.zeta)};
    if (std::holds_alternative<CoxFollowup>(spec.missing.monotone)) return {s.z2};
    return {};
  }

 private:
  ScenarioConfig config_;
  std::shared_ptr<const GpSampler> gp_;
  std::vector<std::vector<double>> means_;
  std::optional<double> min_followup_minutes_;
};

struct ScenarioOutput {
  std::vector<GroupDraw> groups;
  GroundTruth truth;
};

/// Cohorts for the configured seed plus large-sample ground truth.
inline ScenarioOutput generate_scenario(const ScenarioConfig& config, std::span<const TargetRange> ranges) {
  ScenarioSampler s(config);
  ScenarioOutput out;
  out.groups = s.draw(config.seed);
  out.truth = s.ground_truth(ranges);
  return out;
}

}  // namespace tir_ipw::sim
