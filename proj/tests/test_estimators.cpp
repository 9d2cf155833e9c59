#include <catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tir_ipw/estimators.hpp"
#include "tir_ipw/pipeline.hpp"

using namespace tir_ipw;
using Catch::Approx;

namespace {

// grid 0,5,10,15: three left endpoints
Cohort three_subjects() {
  const auto grid = th::minutes_grid(15);
  return Cohort(grid, {th::path("A", grid, th::constant(grid, 100), 15),
                       th::path("B", grid, th::constant(grid, 50), 15),
                       th::path("C", grid, th::constant(grid, 100), 3)});
}

}  // namespace

TEST_CASE("weighted cross-sectional proportion on a hand example", "[estimators]") {
  const auto cohort = three_subjects();
  const std::vector<SurvivalCurve> curves{{"A", {1, 0.5, 0.5, 0.5}},
                                          {"B", {1, 1, 0.25, 0.25}},
                                          {"C", {1, 0.5, 0.5, 0.5}}};
  const auto pg = estimate_pg(cohort, ranges::in_target(), curves);
  REQUIRE(pg.values.size() == 3);
  // oracle: sum over available subjects of I/p divided by the sum of 1/p
  const double j1 = (1 / 0.5) / (1 / 0.5 + 1 / 1.0);
  const double j2 = (1 / 0.5) / (1 / 0.5 + 1 / 0.25);
  CHECK(pg.values[0] == Approx(2.0 / 3.0));
  CHECK(pg.values[1] == Approx(j1));
  CHECK(pg.values[2] == Approx(j2));
  CHECK(pg.effective_weight_sums[2] == Approx(1 / 0.5 + 1 / 0.25));
  CHECK(pg.diagnostics.min_available_count == 2);
  const auto mu = mean_tir_from_pg(pg, cohort.grid());
  CHECK(mu.mu_hat == Approx((2.0 / 3.0 + j1 + j2) / 3.0));
  CHECK(mu.method == Method::proposed);

  const auto simple = estimate_pg_simplified(cohort, ranges::in_target());
  CHECK(simple.values[1] == Approx(0.5));
}

TEST_CASE("weight floor bounds the survival weights", "[estimators]") {
  const auto cohort = three_subjects();
  const std::vector<SurvivalCurve> curves{{"A", {1, 0.001, 0.001, 0.001}},
                                          {"B", {1, 1, 1, 1}},
                                          {"C", {1, 1, 1, 1}}};
  const auto pg = estimate_pg(cohort, ranges::in_target(), curves, 0.01);
  CHECK(pg.values[1] == Approx(100.0 / 101.0));
  CHECK(pg.diagnostics.floor_activations == 2);
  CHECK(pg.diagnostics.min_survival_weight == 0.001);
  CHECK_THROWS_AS(estimate_pg(cohort, ranges::in_target(), curves, 0.0), InputError);
}

TEST_CASE("positivity failure names the first unidentified time", "[estimators]") {
  const auto grid = th::minutes_grid(15);
  Cohort c(grid, {th::path("A", grid, th::constant(grid, 100), 7)});
  try {
    estimate_pg_simplified(c, ranges::in_target());
    FAIL("expected a positivity error");
  } catch (const PositivityError& e) {
    CHECK(e.earliest_minutes() == 10.0);
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("t = 10 min"));
  }
  EstimatorConfig cfg;
  cfg.mode = WeightMode::km;
  CHECK_THROWS_AS(Engine(c, {ranges::in_target()}, cfg).evaluate(), PositivityError);
}

TEST_CASE("subject-level oracle and naive averages", "[estimators]") {
  const auto grid = th::minutes_grid(20);
  std::vector<double> y{60, 100, 200, 100, 999};
  Mask m(grid.size(), 1);
  m[1] = 0;
  Trajectory t("a", grid, y, m, 20);
  CHECK(subject_tir_available(t, ranges::in_target()) == Approx(1.0 / 3.0));
  CHECK_THROWS_AS(subject_tir_oracle(t, ranges::in_target()), InputError);
  const auto full = th::path("b", grid, y, 20);
  CHECK(subject_tir_oracle(full, ranges::in_target()) == 0.5);  // last point excluded
  Cohort c(grid, {full, th::path("c", grid, th::constant(grid, 65), 20)});
  CHECK(oracle_mean_tir(c, ranges::hypo()).mu_hat == Approx(0.625));
  CHECK(naive_mean_tir(c, ranges::hypo()).mu_hat == Approx(0.625));
}

TEST_CASE("all methods agree on complete data", "[estimators]") {
  const auto d = th::draw_group(sim::presets::complete(60, 4), 0, 4);
  const auto& c = d.observed;
  REQUIRE(c.size() == 60);
  for (const auto& g : ranges::inpatient6()) {
    const double o = oracle_mean_tir(c, g).mu_hat;
    for (auto m : {Method::naive, Method::simplified, Method::proposed}) {
      for (auto mode : {WeightMode::cox, WeightMode::km}) {
        EstimatorConfig cfg;
        cfg.method = m;
        cfg.mode = mode;
        CHECK(mean_tir(c, g, cfg).mu_hat == Approx(o).margin(1e-10));
      }
    }
  }
}

TEST_CASE("range estimates sum to one for every method", "[estimators]") {
  const auto d = th::draw_group(sim::presets::informative(80, 2), 1, 2);
  for (auto m : {Method::naive, Method::simplified, Method::proposed}) {
    EstimatorConfig cfg;
    cfg.method = m;
    const Engine e(d.observed, ranges::standard3(), cfg);
    const auto mu = e.evaluate().mu;
    CHECK(std::abs(mu[0] + mu[1] + mu[2] - 1.0) < 1e-12);
  }
  EstimatorConfig oc;
  oc.method = Method::oracle;
  const Engine o(d.complete, ranges::standard3(), oc);
  const auto mu = o.evaluate().mu;
  CHECK(std::abs(mu[0] + mu[1] + mu[2] - 1.0) < 1e-12);
}

TEST_CASE("identical survival curves reproduce the unweighted estimator bit for bit", "[estimators]") {
  const auto d = th::draw_group(sim::presets::informative(80, 3), 2, 3);
  const auto& c = d.observed;
  const auto shared = survival_prob_km(c);
  std::vector<SurvivalCurve> curves(c.size(), shared);
  for (const auto& g : ranges::standard3()) {
    const auto a = estimate_pg(c, g, curves);
    const auto b = estimate_pg_simplified(c, g);
    CHECK(a.values == b.values);
  }
}

TEST_CASE("engine matches the single-range estimators", "[estimators]") {
  const auto d = th::draw_group(sim::presets::informative(80, 5), 1, 5);
  const auto& c = d.observed;
  const Engine e(c, ranges::standard3(), {});
  const auto ev = e.evaluate(true);
  REQUIRE(ev.fit);
  for (std::size_t r = 0; r < 3; ++r) {
    std::vector<SurvivalCurve> curves;
    for (const auto& z : c.covariates()) curves.push_back(survival_prob(*ev.fit, z, c.grid()));
    const auto pg = estimate_pg(c, ranges::standard3()[r], curves);
    CHECK(mean_tir_from_pg(pg, c.grid()).mu_hat == Approx(ev.mu[r]).epsilon(1e-13));
    CHECK(proposed_mean_tir(c, ranges::standard3()[r]).mu_hat == Approx(ev.mu[r]).epsilon(1e-13));
  }
  EstimatorConfig naive;
  naive.method = Method::naive;
  CHECK(Engine(c, ranges::standard3(), naive).evaluate().mu[1] ==
        Approx(naive_mean_tir(c, ranges::in_target()).mu_hat).epsilon(1e-13));
}

TEST_CASE("case-weight multiplicities equal duplicated subjects", "[estimators]") {
  const auto d = th::draw_group(sim::presets::informative(40, 6), 1, 6);
  const auto& c = d.observed;
  std::vector<double> mult(c.size(), 1.0);
  mult[0] = 3;
  mult[1] = 0;
  std::vector<Trajectory> t;
  std::vector<CovariateProcess> z;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int k = 0; k < mult[i]; ++k) {
      Trajectory copy(c[i].subject_id() + "#" + std::to_string(k), c.grid(),
                      std::vector<double>(c[i].glucose().begin(), c[i].glucose().end()),
                      Mask(c[i].intermittent_mask().begin(), c[i].intermittent_mask().end()),
                      c[i].followup_minutes());
      z.emplace_back(copy.subject_id(), c.grid(), c.covariates()[i].values());
      t.push_back(std::move(copy));
    }
  }
  const Cohort dup(c.grid(), t, z);
  for (auto m : {Method::naive, Method::proposed}) {
    EstimatorConfig cfg;
    cfg.method = m;
    const auto a = Engine(c, ranges::standard3(), cfg).evaluate(mult).mu;
    const auto b = Engine(dup, ranges::standard3(), cfg).evaluate().mu;
    for (std::size_t r = 0; r < 3; ++r) CHECK(a[r] == Approx(b[r]).epsilon(1e-9));
  }
}

TEST_CASE("no follow-up loss gives unit weights and a note", "[estimators]") {
  const auto d = th::draw_group(sim::presets::complete(20, 1), 0, 1);
  const auto ev = Engine(d.observed, ranges::standard3(), {}).evaluate();
  CHECK_FALSE(ev.fit);
  REQUIRE(ev.diagnostics.notes.size() == 1);
}

TEST_CASE("one-day horizon holds the previous-day covariate at zero", "[estimators]") {
  auto cfg = sim::presets::informative(100, 3);
  cfg.grid = TimeGrid(5.0, 1.0);
  const auto d = th::draw_group(cfg, 1, 3);
  const auto ev = Engine(d.observed, ranges::standard3(), {}).evaluate();
  REQUIRE(ev.fit);
  CHECK(ev.fit->fixed_at_zero == std::vector<std::size_t>{0});
  CHECK(ev.fit->beta[0] == 0.0);
  REQUIRE(ev.diagnostics.notes.size() == 1);
  CHECK_THAT(ev.diagnostics.notes[0], Catch::Matchers::ContainsSubstring("z1"));
  CHECK(ev.mu[0] + ev.mu[1] + ev.mu[2] == Approx(1.0).epsilon(1e-12));
}
