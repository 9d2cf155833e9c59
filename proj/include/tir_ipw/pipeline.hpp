#pragma once

#include <algorithm>
#include <bit>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tir_ipw/cohort.hpp"
#include "tir_ipw/errors.hpp"
#include "tir_ipw/estimators.hpp"
#include "tir_ipw/range.hpp"
#include "tir_ipw/survival.hpp"

namespace tir_ipw {

enum class WeightMode { cox, km };

inline std::string to_string(WeightMode m) { return m == WeightMode::cox ? "cox" : "km"; }

inline WeightMode parse_weight_mode(const std::string& s) {
  if (s == "cox") return WeightMode::cox;
  if (s == "km") return WeightMode::km;
  throw InputError("unknown weight mode '" + s + "' (cox, km)");
}

struct EstimatorConfig {
  Method method = Method::proposed;
  WeightMode mode = WeightMode::cox;
  double weight_floor = 0.01;
  CoxOptions cox;
  /// Accept a Cox fit that hit the iteration limit instead of failing.
  bool allow_nonconverged = false;
};

struct Evaluation {
  std::vector<double> mu;
  std::vector<PgCurve> curves;
  Diagnostics diagnostics;
  std::optional<CoxFit> fit;
};

/// One estimator applied to one cohort for several ranges at once, with optional
/// per-subject case weights. Bootstrap replicates reuse the same engine.
class Engine {
 public:
  Engine(const Cohort& cohort, std::vector<TargetRange> ranges, EstimatorConfig config = {})
      : ranges_(std::move(ranges)), config_(config) {
    if (cohort.empty()) throw InputError("empty cohort");
    if (ranges_.empty()) throw InputError("no target ranges");
    if (ranges_.size() > 32) throw InputError("at most 32 ranges per run");
    if (!(config_.weight_floor > 0.0 && config_.weight_floor < 0.5)) {
      throw InputError("weight floor must lie in (0, 0.5)");
    }
    const bool need_cov = config_.method == Method::proposed && config_.mode == WeightMode::cox;
    if (need_cov && !cohort.has_covariates()) {
      std::vector<CovariateProcess> cov;
      cov.reserve(cohort.size());
      for (const auto& t : cohort.trajectories()) cov.push_back(history_covariates(t));
      cohort_ = std::make_shared<const Cohort>(cohort.with_covariates(std::move(cov)));
    } else {
      cohort_ = std::make_shared<const Cohort>(cohort);
    }
    const auto& grid = cohort_->grid();
    m_ = integration_points(grid);
    const auto n = cohort_->size();
    offsets_.assign(n + 1, 0);
    needed_.assign(n, 0);
    followup_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = (*cohort_)[i];
      followup_[i] = t.followup_minutes();
      const auto a = t.availability();
      const auto y = t.glucose();
      for (std::size_t j = 0; j < m_; ++j) {
        if (!a[j]) continue;
        std::uint32_t bits = 0;
        for (std::size_t r = 0; r < ranges_.size(); ++r) {
          if (ranges_[r].contains(y[j])) bits |= 1u << r;
        }
        index_.push_back(static_cast<std::uint32_t>(j));
        bits_.push_back(bits);
        needed_[i] = j + 1;
      }
      offsets_[i + 1] = index_.size();
    }
    if (config_.method == Method::oracle || config_.method == Method::naive) {
      subject_mu_.resize(n * ranges_.size());
      for (std::size_t i = 0; i < n; ++i) {
        const auto& t = (*cohort_)[i];
        for (std::size_t r = 0; r < ranges_.size(); ++r) {
          subject_mu_[i * ranges_.size() + r] = config_.method == Method::oracle
                                                    ? subject_tir_oracle(t, ranges_[r])
                                                    : subject_tir_available(t, ranges_[r]);
        }
      }
    }
    if (need_cov) cox_ = std::make_shared<const CoxData>(CoxData::from_cohort(*cohort_));
  }

  const Cohort& cohort() const { return *cohort_; }
  const std::vector<TargetRange>& ranges() const { return ranges_; }
  const EstimatorConfig& config() const { return config_; }
  std::size_t size() const { return cohort_->size(); }

  Evaluation evaluate(bool keep_curves = false) const {
    std::vector<double> ones(size(), 1.0);
    return evaluate(ones, keep_curves);
  }

  /// Estimates with subject i counted multiplicity[i] times.
  Evaluation evaluate(std::span<const double> multiplicity, bool keep_curves = false) const {
    if (multiplicity.size() != size()) throw InputError("one multiplicity per subject required");
    switch (config_.method) {
      case Method::oracle:
      case Method::naive: return subject_average(multiplicity);
      case Method::simplified: return weighted(multiplicity, keep_curves, nullptr, PgMethod::simplified);
      case Method::proposed: break;
    }
    if (config_.mode == WeightMode::km) {
      const auto curve = with_stage("survival_prob_km", [&] {
        return km_values(cohort_->grid(), followup_, multiplicity);
      });
      return weighted(multiplicity, keep_curves, [&](std::size_t, std::span<double> out) {
        std::copy_n(curve.begin(), out.size(), out.begin());
      }, PgMethod::ipw);
    }
    bool any_event = false;
    for (std::size_t i = 0; i < size(); ++i) {
      any_event = any_event || (multiplicity[i] > 0.0 && cox_->event(i));
    }
    if (!any_event) {
      auto ev = weighted(multiplicity, keep_curves, nullptr, PgMethod::ipw);
      ev.diagnostics.notes.push_back(
          "no follow-up ends before tau; survival weights are identically 1");
      return ev;
    }
    CoxOptions copt = config_.cox;
    copt.fix_flat_covariates = true;
    CoxFit fit = with_stage("fit_cox", [&] { return fit_cox_weighted(*cox_, multiplicity, copt); });
    if (!fit.converged && !config_.allow_nonconverged) {
      throw FitError("fit_cox: no convergence after " + std::to_string(fit.iterations) +
                     " iterations (score sup-norm " + csv::format(fit.final_score_norm) + ")");
    }
    const auto& cov = cohort_->covariates();
    const auto& grid = cohort_->grid();
    auto ev = weighted(multiplicity, keep_curves, [&](std::size_t i, std::span<double> out) {
      survival_values(fit, cov[i].values().data(), cov[i].dimension(), grid, out);
    }, PgMethod::ipw);
    if (!fit.converged) ev.diagnostics.notes.push_back("Cox fit did not converge");
    for (auto k : fit.fixed_at_zero) {
      ev.diagnostics.notes.push_back("covariate '" + detail::covariate_name(copt, k) +
                                     "' is constant within every risk set; its coefficient is held at 0");
    }
    ev.fit = std::move(fit);
    return ev;
  }

  /// Full estimates (one per range) on the unweighted cohort.
  std::vector<TirEstimate> estimates(bool keep_curves = false,
                                     std::vector<PgCurve>* curves = nullptr) const {
    auto ev = evaluate(keep_curves || curves);
    std::vector<TirEstimate> out;
    for (std::size_t r = 0; r < ranges_.size(); ++r) {
      TirEstimate e;
      e.mu_hat = ev.mu[r];
      e.method = config_.method;
      e.range = ranges_[r];
      e.tau_days = cohort_->grid().tau_days();
      e.diagnostics = ev.diagnostics;
      out.push_back(std::move(e));
    }
    if (curves) *curves = std::move(ev.curves);
    return out;
  }

 private:
  Evaluation subject_average(std::span<const double> mult) const {
    const auto R = ranges_.size();
    Evaluation ev;
    ev.mu.assign(R, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (mult[i] <= 0.0) continue;
      total += mult[i];
      for (std::size_t r = 0; r < R; ++r) ev.mu[r] += mult[i] * subject_mu_[i * R + r];
    }
    if (!(total > 0.0)) throw InputError("all case weights are zero");
    for (auto& v : ev.mu) v /= total;
    return ev;
  }

  template <typename Fill>
  Evaluation weighted(std::span<const double> mult, bool keep_curves, Fill&& fill, PgMethod method) const {
    return weighted_impl(mult, keep_curves, std::forward<Fill>(fill), method);
  }

  Evaluation weighted(std::span<const double> mult, bool keep_curves, std::nullptr_t,
                      PgMethod method) const {
    return weighted_impl(mult, keep_curves, [](std::size_t, std::span<double> out) {
      std::fill(out.begin(), out.end(), 1.0);
    }, method);
  }

  template <typename Fill>
  Evaluation weighted_impl(std::span<const double> mult, bool keep_curves, Fill&& fill,
                           PgMethod method) const {
    const auto R = ranges_.size();
    const auto n = size();
    const double floor = config_.weight_floor;
    Evaluation ev;
    auto& d = ev.diagnostics;

    // floored survival probability at each available (subject, time) pair
    std::vector<double> p(index_.size(), 1.0);
    std::vector<double> ref(m_, 0.0);
    std::vector<double> row(m_);
    for (std::size_t i = 0; i < n; ++i) {
      if (mult[i] <= 0.0 || needed_[i] == 0) continue;
      std::span<double> out(row.data(), needed_[i]);
      fill(i, out);
      for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) {
        const auto j = index_[k];
        double v = out[j];
        if (method == PgMethod::ipw) v = detail::floored(v, floor, d);
        p[k] = v;
        ref[j] = std::max(ref[j], v);
      }
    }
    std::vector<double> den(m_, 0.0), num(m_ * R, 0.0);
    std::vector<std::size_t> count(m_, 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (mult[i] <= 0.0) continue;
      for (auto k = offsets_[i]; k < offsets_[i + 1]; ++k) {
        const auto j = index_[k];
        const double w = mult[i] * (ref[j] / p[k]);
        den[j] += w;
        ++count[j];
        auto bits = bits_[k];
        while (bits) {
          const auto r = static_cast<std::size_t>(std::countr_zero(bits));
          num[j * R + r] += w;
          bits &= bits - 1;
        }
      }
    }
    ev.mu.assign(R, 0.0);
    if (keep_curves) {
      ev.curves.resize(R);
      for (auto& c : ev.curves) {
        c.method = method;
        c.values.resize(m_);
        c.effective_weight_sums.resize(m_);
      }
    }
    for (std::size_t j = 0; j < m_; ++j) {
      if (!(den[j] > 0.0)) {
        const auto e = positivity_failure(cohort_->grid(), j);
        throw PositivityError(std::string("estimate_pg: ") + e.what(), e.earliest_minutes());
      }
      d.min_available_count = std::min(d.min_available_count, count[j]);
      for (std::size_t r = 0; r < R; ++r) {
        const double v = num[j * R + r] / den[j];
        ev.mu[r] += v;
        if (keep_curves) {
          ev.curves[r].values[j] = v;
          ev.curves[r].effective_weight_sums[j] = den[j] / ref[j];
        }
      }
    }
    for (auto& v : ev.mu) v /= static_cast<double>(m_);
    if (keep_curves) {
      for (auto& c : ev.curves) c.diagnostics = d;
    }
    return ev;
  }

  std::shared_ptr<const Cohort> cohort_;
  std::shared_ptr<const CoxData> cox_;
  std::vector<TargetRange> ranges_;
  EstimatorConfig config_;
  std::size_t m_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> needed_;
  std::vector<std::uint32_t> index_;
  std::vector<std::uint32_t> bits_;
  std::vector<double> followup_;
  std::vector<double> subject_mu_;
};

/// Cox (or product-limit) weights, IPW p_G, and its time average for one range.
inline TirEstimate proposed_mean_tir(const Cohort& cohort, const TargetRange& g,
                                     EstimatorConfig config = {}) {
  config.method = Method::proposed;
  Engine engine(cohort, {g}, config);
  return engine.estimates().front();
}

/// Any method through the shared engine.
inline TirEstimate mean_tir(const Cohort& cohort, const TargetRange& g, const EstimatorConfig& config) {
  Engine engine(cohort, {g}, config);
  return engine.estimates().front();
}

}  // namespace tir_ipw
