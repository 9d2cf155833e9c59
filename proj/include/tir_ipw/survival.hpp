#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/errors.hpp"
#include "tir_ipw/grid.hpp"

namespace tir_ipw {

struct CoxOptions {
  double score_tolerance = 1e-8;
  double loglik_tolerance = 1e-12;
  int max_iterations = 100;
  int max_halvings = 20;
  /// Keep beta_k = 0 for covariates that never vary inside a risk set at an event time
  /// (the partial likelihood does not depend on them) instead of failing.
  bool fix_flat_covariates = false;
  /// Names used in error messages; defaults to z1..zp.
  std::vector<std::string> covariate_names;
};

/// Fitted proportional-hazards model for the follow-up duration.
///
/// The Breslow cumulative baseline hazard is a right-continuous step function with
/// jumps at the distinct event times (minutes), stored both as increments and as
/// running totals.
struct CoxFit {
  Eigen::VectorXd beta;
  std::vector<double> jump_times;
  std::vector<double> increments;
  std::vector<double> cumulative;
  bool converged = false;
  int iterations = 0;
  double final_score_norm = 0.0;
  double log_partial_likelihood = 0.0;
  double null_log_partial_likelihood = 0.0;
  /// Covariates held at beta = 0 by fix_flat_covariates.
  std::vector<std::size_t> fixed_at_zero;

  double cumulative_hazard(double t_minutes) const {
    auto it = std::upper_bound(jump_times.begin(), jump_times.end(), t_minutes);
    if (it == jump_times.begin()) return 0.0;
    return cumulative[static_cast<std::size_t>(it - jump_times.begin()) - 1];
  }
};

/// p_C,i(t_j) = Pr(t_j <= C_i | history) on the grid.
struct SurvivalCurve {
  std::string subject_id;
  std::vector<double> values;
};

/// Follow-up data laid out for repeated partial-likelihood evaluation.
///
/// Observed time is min(C, tau); C > tau is administratively censored at tau.
/// Holds pointers into the covariate processes, which must outlive it.
class CoxData {
 public:
  CoxData(const TimeGrid& grid, std::span<const double> followup_minutes,
          std::span<const CovariateProcess> covariates)
      : grid_(grid), tau_(grid.tau_minutes()) {
    const auto n = followup_minutes.size();
    if (covariates.size() != n) throw InputError("one covariate process per subject required");
    p_ = n ? covariates.front().dimension() : 0;
    time_.resize(n);
    event_.resize(n);
    index_.resize(n);
    z_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = followup_minutes[i];
      event_[i] = static_cast<std::uint8_t>(c <= tau_);
      time_[i] = std::min(c, tau_);
      index_[i] = grid.left_limit_index(time_[i]);
      if (covariates[i].dimension() != p_) throw InputError("covariate dimension differs");
      z_[i] = covariates[i].values().data();
    }
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return time_[a] > time_[b]; });
  }

  static CoxData from_cohort(const Cohort& cohort) {
    if (!cohort.has_covariates()) throw InputError("cohort has no covariates");
    std::vector<double> c(cohort.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = cohort[i].followup_minutes();
    return CoxData(cohort.grid(), c, cohort.covariates());
  }

  std::size_t size() const { return time_.size(); }
  std::size_t dimension() const { return p_; }
  const TimeGrid& grid() const { return grid_; }
  double tau() const { return tau_; }
  double time(std::size_t i) const { return time_[i]; }
  bool event(std::size_t i) const { return event_[i] != 0; }
  std::size_t time_index(std::size_t i) const { return index_[i]; }
  const double* z(std::size_t i, std::size_t grid_index) const { return z_[i] + grid_index * p_; }
  std::span<const std::size_t> by_time_desc() const { return order_; }

 private:
  TimeGrid grid_;
  double tau_;
  std::size_t p_ = 0;
  std::vector<double> time_;
  std::vector<std::uint8_t> event_;
  std::vector<std::size_t> index_;
  std::vector<const double*> z_;
  std::vector<std::size_t> order_;
};

namespace detail {

inline double dot(const double* z, const Eigen::VectorXd& beta) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < beta.size(); ++c) s += z[c] * beta[c];
  return s;
}

/// Partial-likelihood machinery for one weighting of the subjects.
///
/// Risk-set sums at an event time use covariates at the left limit of that time.
/// Events sharing a grid bin share those covariate values, so one descending sweep
/// over the at-risk subjects serves all events in the bin.
class PartialLikelihood {
 public:
  PartialLikelihood(const CoxData& data, std::span<const double> weights)
      : data_(data), p_(data.dimension()) {
    for (auto i : data.by_time_desc()) {
      if (weights[i] > 0.0) {
        active_.push_back(i);
        w_.push_back(weights[i]);
      }
    }
    // distinct event times, descending
    for (std::size_t a = 0; a < active_.size(); ++a) {
      const auto i = active_[a];
      if (!data.event(i)) continue;
      const double t = data.time(i);
      if (times_.empty() || times_.back() != t) {
        times_.push_back(t);
        bins_.push_back(data.time_index(i));
        event_weight_.push_back(0.0);
        members_.emplace_back();
      }
      event_weight_.back() += w_[a];
      members_.back().push_back(a);
    }
  }

  std::size_t active_count() const { return active_.size(); }
  std::size_t event_time_count() const { return times_.size(); }

  struct Value {
    double loglik = 0.0;
    Eigen::VectorXd score;
    Eigen::MatrixXd information;
    std::vector<double> risk_sum;  // S0 per event time, descending order
  };

  Value evaluate(const Eigen::VectorXd& beta, bool derivatives) const {
    Value v;
    v.score = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p_));
    v.information = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p_), static_cast<Eigen::Index>(p_));
    v.risk_sum.assign(times_.size(), 0.0);
    std::vector<double> s1(p_), s2(p_ * p_), zbar(p_);
    std::size_t e = 0;
    while (e < times_.size()) {
      const auto bin = bins_[e];
      std::size_t last = e;
      while (last + 1 < times_.size() && bins_[last + 1] == bin) ++last;
      double shift = -std::numeric_limits<double>::infinity();
      for (std::size_t a = 0; a < active_.size() && data_.time(active_[a]) >= times_[last]; ++a) {
        shift = std::max(shift, dot(data_.z(active_[a], bin), beta));
      }
      double s0 = 0.0;
      std::fill(s1.begin(), s1.end(), 0.0);
      std::fill(s2.begin(), s2.end(), 0.0);
      std::size_t a = 0;
      for (; e < times_.size() && bins_[e] == bin; ++e) {
        const double t = times_[e];
        for (; a < active_.size() && data_.time(active_[a]) >= t; ++a) {
          const double* z = data_.z(active_[a], bin);
          const double r = w_[a] * std::exp(dot(z, beta) - shift);
          s0 += r;
          if (derivatives) {
            for (std::size_t c = 0; c < p_; ++c) {
              s1[c] += r * z[c];
              for (std::size_t d = 0; d <= c; ++d) s2[c * p_ + d] += r * z[c] * z[d];
            }
          }
        }
        v.risk_sum[e] = s0 * std::exp(shift);
        const double dw = event_weight_[e];
        for (auto m : members_[e]) {
          const auto i = active_[m];
          const double* z = data_.z(i, bin);
          v.loglik += w_[m] * dot(z, beta);
          if (derivatives) {
            for (std::size_t c = 0; c < p_; ++c) v.score[static_cast<Eigen::Index>(c)] += w_[m] * z[c];
          }
        }
        v.loglik -= dw * (std::log(s0) + shift);
        if (derivatives) {
          for (std::size_t c = 0; c < p_; ++c) {
            zbar[c] = s1[c] / s0;
            v.score[static_cast<Eigen::Index>(c)] -= dw * zbar[c];
          }
          for (std::size_t c = 0; c < p_; ++c) {
            for (std::size_t d = 0; d <= c; ++d) {
              const double val = dw * (s2[c * p_ + d] / s0 - zbar[c] * zbar[d]);
              v.information(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(d)) += val;
              if (d != c) v.information(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(c)) += val;
            }
          }
        }
      }
    }
    return v;
  }

  /// Breslow increments at the distinct event times, ascending.
  void breslow(const Value& at_beta, CoxFit& fit) const {
    const auto m = times_.size();
    fit.jump_times.resize(m);
    fit.increments.resize(m);
    fit.cumulative.resize(m);
    double cum = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const auto e = m - 1 - k;
      fit.jump_times[k] = times_[e];
      fit.increments[k] = event_weight_[e] / at_beta.risk_sum[e];
      cum += fit.increments[k];
      fit.cumulative[k] = cum;
    }
  }

 private:
  const CoxData& data_;
  std::size_t p_;
  std::vector<std::size_t> active_;
  std::vector<double> w_;
  std::vector<double> times_;
  std::vector<std::size_t> bins_;
  std::vector<double> event_weight_;
  std::vector<std::vector<std::size_t>> members_;
};

inline std::string covariate_name(const CoxOptions& opt, std::size_t c) {
  if (c < opt.covariate_names.size()) return opt.covariate_names[c];
  return "z" + std::to_string(c + 1);
}

inline double sup_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace detail

/// Partial-likelihood fit with case weights (bootstrap multiplicities).
///
/// Damped Newton from beta = 0 with step halving whenever the log partial
/// likelihood would decrease. Non-convergence is reported through
/// `converged`, not thrown.
inline CoxFit fit_cox_weighted(const CoxData& data, std::span<const double> weights,
                               const CoxOptions& opt = {}) {
  if (weights.size() != data.size()) throw InputError("one weight per subject required");
  if (data.dimension() < 1) throw FitError("Cox model needs at least one covariate");
  detail::PartialLikelihood pl(data, weights);
  if (pl.active_count() < 2) throw FitError("Cox model needs at least two subjects");
  if (pl.event_time_count() == 0) {
    throw FitError("no follow-up ends within the horizon (zero events); Cox model not estimable");
  }
  const auto p = static_cast<Eigen::Index>(data.dimension());

  CoxFit fit;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto cur = pl.evaluate(beta, true);
  fit.null_log_partial_likelihood = cur.loglik;

  std::vector<Eigen::Index> free;
  {
    const Eigen::VectorXd diag = cur.information.diagonal();
    const double scale = std::max(1.0, diag.cwiseAbs().maxCoeff());
    for (Eigen::Index k = 0; k < p; ++k) {
      if (opt.fix_flat_covariates && diag(k) <= 1e-14 * scale) {
        fit.fixed_at_zero.push_back(static_cast<std::size_t>(k));
      } else {
        free.push_back(k);
      }
    }
  }
  const auto q = static_cast<Eigen::Index>(free.size());
  auto sub_info = [&](const Eigen::MatrixXd& info) {
    Eigen::MatrixXd m(q, q);
    for (Eigen::Index a = 0; a < q; ++a) {
      for (Eigen::Index b = 0; b < q; ++b) m(a, b) = info(free[a], free[b]);
    }
    return m;
  };
  auto sub_score = [&](const Eigen::VectorXd& score) {
    Eigen::VectorXd v(q);
    for (Eigen::Index a = 0; a < q; ++a) v(a) = score(free[a]);
    return v;
  };

  if (q > 0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sub_info(cur.information));
    const double top = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues()(0) <= 1e-10 * top) {
      Eigen::Index worst = 0;
      es.eigenvectors().col(0).cwiseAbs().maxCoeff(&worst);
      throw FitError("singular information matrix: covariate '" +
                     detail::covariate_name(opt, static_cast<std::size_t>(free[worst])) +
                     "' has no variation within the risk sets (or is collinear with others)");
    }
  }

  int iter = 0;
  bool converged = q == 0;
  for (; q > 0 && iter < opt.max_iterations; ++iter) {
    const Eigen::VectorXd score = sub_score(cur.score);
    if (detail::sup_norm(score) < opt.score_tolerance) {
      converged = true;
      break;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sub_info(cur.information));
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    const Eigen::VectorXd dir = ldlt.solve(score);
    if (!dir.allFinite()) break;
    Eigen::VectorXd step = Eigen::VectorXd::Zero(p);
    for (Eigen::Index a = 0; a < q; ++a) step(free[a]) = dir(a);
    Eigen::VectorXd trial = beta + step;
    auto next = pl.evaluate(trial, true);
    int halvings = 0;
    while (!(next.loglik >= cur.loglik) && halvings < opt.max_halvings) {
      step *= 0.5;
      trial = beta + step;
      next = pl.evaluate(trial, true);
      ++halvings;
    }
    const double scale = std::max(1.0, std::abs(cur.loglik));
    if (!(next.loglik >= cur.loglik)) {
      // no representable improvement left along the Newton direction
      converged = std::abs(next.loglik - cur.loglik) < opt.loglik_tolerance * scale;
      ++iter;
      break;
    }
    const double change = next.loglik - cur.loglik;
    beta = trial;
    cur = std::move(next);
    if (std::abs(change) < opt.loglik_tolerance * scale) {
      converged = true;
      ++iter;
      break;
    }
  }
  fit.beta = beta;
  fit.converged = converged && beta.allFinite();
  fit.iterations = iter;
  fit.final_score_norm = q > 0 ? detail::sup_norm(sub_score(cur.score)) : 0.0;
  fit.log_partial_likelihood = cur.loglik;
  pl.breslow(cur, fit);
  return fit;
}

/// Unweighted fit: every subject once.
inline CoxFit fit_cox(const CoxData& data, const CoxOptions& opt = {}) {
  std::vector<double> w(data.size(), 1.0);
  return fit_cox_weighted(data, w, opt);
}

/// Fits the model for follow-up given the cohort's covariates over its grid horizon.
inline CoxFit fit_cox(const Cohort& cohort, const CoxOptions& opt = {}) {
  return fit_cox(CoxData::from_cohort(cohort), opt);
}

/// Log partial likelihood at an arbitrary beta (for diagnostics and oracles).
inline double log_partial_likelihood(const CoxData& data, const Eigen::VectorXd& beta) {
  std::vector<double> w(data.size(), 1.0);
  detail::PartialLikelihood pl(data, w);
  return pl.evaluate(beta, false).loglik;
}

/// Writes exp{-sum_{u <= t_j} exp(Z(u-)'beta) dLambda(u)} for j = 0..last into out.
inline void survival_values(const CoxFit& fit, const double* z_rows, std::size_t p,
                            const TimeGrid& grid, std::span<double> out) {
  double cum = 0.0;
  std::size_t idx = 0;
  double value = 1.0;
  const auto m = fit.jump_times.size();
  for (std::size_t j = 0; j < out.size(); ++j) {
    const double t = grid[j];
    bool changed = false;
    for (; idx < m && fit.jump_times[idx] <= t; ++idx) {
      const double* z = z_rows + grid.left_limit_index(fit.jump_times[idx]) * p;
      if (fit.increments[idx] > 0.0) cum += std::exp(detail::dot(z, fit.beta)) * fit.increments[idx];
      changed = true;
    }
    if (changed) value = std::exp(-cum);
    out[j] = value;
  }
}

/// Plug-in survival probability of one subject at every grid point.
inline SurvivalCurve survival_prob(const CoxFit& fit, const CovariateProcess& covariate,
                                   const TimeGrid& grid) {
  if (!(covariate.grid() == grid)) throw InputError("covariate grid differs from target grid");
  if (static_cast<Eigen::Index>(covariate.dimension()) != fit.beta.size()) {
    throw InputError("covariate dimension does not match the fitted model");
  }
  SurvivalCurve c{covariate.subject_id(), std::vector<double>(grid.size())};
  survival_values(fit, covariate.values().data(), covariate.dimension(), grid, c.values);
  return c;
}

/// Product-limit estimate of Pr(t <= C) with case weights; C > tau censored at tau.
inline std::vector<double> km_values(const TimeGrid& grid, std::span<const double> followup_minutes,
                                     std::span<const double> weights) {
  const double tau = grid.tau_minutes();
  struct Obs {
    double t;
    bool event;
    double w;
  };
  std::vector<Obs> obs;
  for (std::size_t i = 0; i < followup_minutes.size(); ++i) {
    if (weights[i] > 0.0) {
      const double c = followup_minutes[i];
      obs.push_back({std::min(c, tau), c <= tau, weights[i]});
    }
  }
  std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.t < b.t; });
  double at_risk = 0.0;
  for (const auto& o : obs) at_risk += o.w;

  std::vector<double> out(grid.size(), 1.0);
  double s = 1.0;
  std::size_t k = 0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    const double t = grid[j];
    while (k < obs.size() && obs[k].t <= t) {
      const double u = obs[k].t;
      double d = 0.0;
      double leaving = 0.0;
      for (; k < obs.size() && obs[k].t == u; ++k) {
        if (obs[k].event) d += obs[k].w;
        leaving += obs[k].w;
      }
      if (d > 0.0) s *= 1.0 - d / at_risk;
      at_risk -= leaving;
    }
    out[j] = s;
  }
  return out;
}

/// Covariate-free survival curve shared by every subject (non-informative follow-up).
inline SurvivalCurve survival_prob_km(const Cohort& cohort) {
  std::vector<double> c(cohort.size()), w(cohort.size(), 1.0);
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = cohort[i].followup_minutes();
  return SurvivalCurve{"*", km_values(cohort.grid(), c, w)};
}

}  // namespace tir_ipw
