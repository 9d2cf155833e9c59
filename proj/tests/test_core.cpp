#include <catch_amalgamated.hpp>

#include <sstream>

#include "helpers.hpp"
#include "tir_ipw/csv.hpp"
#include "tir_ipw/ingest.hpp"
#include "tir_ipw/range.hpp"

using namespace tir_ipw;
using Catch::Approx;

TEST_CASE("grid size and interval lookup", "[grid]") {
  TimeGrid g(5.0, 7.0);
  CHECK(g.size() == 2017);
  CHECK(g.tau_minutes() == 10080.0);
  CHECK(g.interval_index(7.0) == 1);
  CHECK(g.interval_index(10.0) == 2);
  CHECK(g.left_limit_index(10.0) == 1);
  CHECK(g.left_limit_index(10.5) == 2);
  CHECK(g.left_limit_index(0.0) == 0);
  CHECK(g.points_per(kMinutesPerDay) == 288);
  CHECK_THROWS_AS(TimeGrid(7.0, 1.0), InputError);
  CHECK_THROWS_AS(TimeGrid(5.0, -1.0), InputError);
}

TEST_CASE("range membership respects bound types", "[range]") {
  const auto in = ranges::in_target();
  CHECK(in.contains(70.0));
  CHECK(in.contains(180.0));
  CHECK_FALSE(ranges::hyper().contains(180.0));
  CHECK(ranges::hypo().contains(-5.0));
  CHECK_FALSE(ranges::hypo().contains(70.0));
  for (double y : {-10.0, 0.0, 69.999, 70.0, 125.0, 180.0, 180.001, 400.0}) {
    int n = 0;
    for (const auto& r : ranges::standard3()) n += in_range(y, r);
    CHECK(n == 1);
  }
}

TEST_CASE("range parsing", "[range]") {
  const auto r = ranges::parse("[70,140]");
  CHECK(r == ranges::tight_target());
  CHECK(ranges::parse("(250, inf)") == ranges::above250());
  CHECK(ranges::parse(r.label()) == r);
  CHECK(ranges::parse_list("inpatient6").size() == 6);
  CHECK(ranges::parse_list("(-inf,70);[70,180]").size() == 2);
  CHECK_THROWS_AS(ranges::parse("[180,70]"), InputError);
  CHECK_THROWS_AS(ranges::parse("70,180"), InputError);
  CHECK_THROWS_AS(ranges::parse_list(""), InputError);
}

TEST_CASE("availability combines the intermittent mask with follow-up", "[cohort]") {
  const auto grid = th::minutes_grid(30);
  Mask m(grid.size(), 1);
  m[2] = 0;
  Trajectory t("a", grid, th::constant(grid, 100.0), m, 17.0);
  const auto a = t.availability();
  CHECK(std::vector<int>(a.begin(), a.end()) == std::vector<int>{1, 1, 0, 1, 0, 0, 0});
  CHECK(t.available_count() == 3);
  CHECK_FALSE(t.fully_observed());
  CHECK(std::isnan(t.masked().glucose()[5]));
  CHECK_THROWS_AS(Trajectory("b", grid, th::constant(grid, 1.0), m, 0.0), InputError);
  auto y = th::constant(grid, 100.0);
  y[1] = std::nan("");
  CHECK_THROWS_AS(Trajectory("c", grid, y, Mask(grid.size(), 1), 100.0), InputError);
}

TEST_CASE("cohort rejects duplicate ids and misaligned covariates", "[cohort]") {
  const auto grid = th::minutes_grid(20);
  const auto a = th::path("a", grid, th::constant(grid, 90), 100);
  CHECK_THROWS_AS(Cohort(grid, {a, a}), InputError);
  const auto b = th::path("b", grid, th::constant(grid, 90), 100);
  std::vector<CovariateProcess> cov{history_covariates(b), history_covariates(a)};
  CHECK_THROWS_AS(Cohort(grid, {a, b}, cov), InputError);
}

TEST_CASE("previous-day mean covariate", "[cohort]") {
  // 3 days on a 6-hour grid: 4 points per day
  TimeGrid grid(360.0, 3.0);
  std::vector<double> y{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000, 1100, 1200, 1300};
  Mask m(grid.size(), 1);
  m[5] = 0;
  Trajectory t("a", grid, y, m, 3 * kMinutesPerDay);
  const auto z = prev_day_mean_series(t);
  // oracle: mean of available values at t_k in [t_j - 1 day, t_j), divided by 100
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (grid[j] < kMinutesPerDay) {
      CHECK(z[j] == 0.0);
      continue;
    }
    double s = 0;
    int c = 0;
    for (std::size_t k = 0; k < j; ++k) {
      if (grid[k] >= grid[j] - kMinutesPerDay && m[k]) {
        s += y[k];
        ++c;
      }
    }
    CHECK(z[j] == Approx(s / c / 100.0).epsilon(1e-14));
  }
  CHECK(history_covariate_prev_day_mean(t, 4) == Approx(2.5));
}

TEST_CASE("previous-day mean carries forward across an empty window", "[cohort]") {
  TimeGrid grid(360.0, 3.0);
  Mask m;
  for (std::size_t j = 0; j < grid.size(); ++j) m.push_back(j < 4 || j >= 9);
  std::vector<double> y(grid.size(), 150.0);
  y[3] = 250.0;
  Trajectory t("a", grid, y, m, 3 * kMinutesPerDay);
  const auto z = prev_day_mean_series(t);
  CHECK(z[4] == Approx(1.75));
  CHECK(z[8] == Approx(2.5));  // window 4..7 empty: value at index 7 carried
  CHECK(z[9] == z[8]);         // window 5..8 empty
  CHECK(z[10] == Approx(1.5)); // window 6..9 holds index 9
}

TEST_CASE("csv number formatting round-trips", "[csv]") {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5}) {
    double back = 0;
    REQUIRE(csv::parse_double(csv::format(v), back));
    CHECK(back == v);
  }
  CHECK(csv::format(7.0) == "7");
  double x = 0;
  CHECK(csv::parse_double("-inf", x));
  CHECK(std::isinf(x));
  CHECK_FALSE(csv::parse_double("12abc", x));
}

namespace {
std::vector<Reading> sample_rows() {
  return {{"s1", 0.0, 100.0}, {"s1", 7.0, 110.0}, {"s1", 9.0, 115.0}, {"s2", 3.0, 60.0},
          {"s2", 12.0, 65.0}, {"s1", 20.0, 300.0}, {"s3", 0.0, 120.0}, {"s2", 500.0, 70.0}};
}
}  // namespace

TEST_CASE("ingestion snaps readings to grid intervals", "[ingest]") {
  const auto grid = th::minutes_grid(30);
  std::unordered_map<std::string, double> fu{{"s1", 0.02}, {"s2", 1.0}, {"s3", 1.0 / kMinutesPerDay}};
  IngestOptions opt;
  opt.min_followup_minutes = 2.0;
  const auto res = ingest_readings(sample_rows(), grid, fu, opt);
  const auto& c = res.cohort;
  REQUIRE(c.size() == 2);
  CHECK(res.rejected_subjects == std::vector<std::string>{"s3"});
  const auto g1 = c[0].glucose();
  CHECK(g1[0] == 100.0);
  CHECK(g1[1] == 115.0);  // latest timestamp in [5,10) wins
  CHECK(std::isnan(g1[2]));
  CHECK(g1[4] == 300.0);
  // follow-up 0.02 d = 28.8 min: t = 30 is not available
  CHECK(c[0].availability()[5] == 0);
  CHECK(c[1].glucose()[0] == 60.0);
  CHECK(c[1].glucose()[2] == 65.0);
  CHECK(res.diagnostics.size() >= 2);
}

TEST_CASE("ingestion is idempotent on its canonical rows", "[ingest]") {
  const auto grid = th::minutes_grid(30);
  std::unordered_map<std::string, double> fu{{"s1", 0.02}, {"s2", 1.0}, {"s3", 0.5}};
  const auto first = ingest_readings(sample_rows(), grid, fu).cohort;
  const auto rows = canonical_rows(first);
  const auto second = ingest_readings(rows, grid, followups_of(first)).cohort;
  REQUIRE(second.size() == first.size());
  for (std::size_t i = 0; i < first.size(); ++i) {
    CHECK(second[i].subject_id() == first[i].subject_id());
    CHECK(second[i].followup_minutes() == first[i].followup_minutes());
    const auto a = first[i].availability(), b = second[i].availability();
    CHECK(std::equal(a.begin(), a.end(), b.begin()));
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (a[j]) CHECK(first[i].glucose()[j] == second[i].glucose()[j]);
    }
  }
  CHECK(canonical_rows(second).size() == rows.size());
}

TEST_CASE("ingestion errors", "[ingest]") {
  const auto grid = th::minutes_grid(30);
  std::unordered_map<std::string, double> fu{{"s1", 1.0}};
  CHECK_THROWS_AS(ingest_readings(std::vector<Reading>{}, grid, fu), InputError);
  CHECK_THROWS_AS(ingest_readings(std::vector<Reading>{{"x", 0, 100}}, grid, fu), InputError);
  CHECK_THROWS_AS(ingest_readings(std::vector<Reading>{{"s1", -1, 100}}, grid, fu), InputError);
  const auto res = ingest_readings(std::vector<Reading>{{"s1", 0, 100}, {"s1", 5, std::nan("")}}, grid, fu);
  CHECK(res.rejected_rows == 1);
}

TEST_CASE("readings csv round trip", "[ingest]") {
  std::ostringstream os;
  write_readings_csv(os, sample_rows());
  std::istringstream is(os.str());
  const auto t = csv::read(is);
  REQUIRE(t.rows.size() == sample_rows().size());
  CHECK(t.header == std::vector<std::string>{"subject_id", "time_minutes", "glucose_mgdl"});
  CHECK(t.rows[1][1] == "7");
}

TEST_CASE("external covariates carry forward and back-fill", "[ingest]") {
  CovariateRows rows;
  rows.names = {"w"};
  rows.by_subject["a"] = {{10.0, {1.0}}, {20.0, {2.0}}};
  const auto grid = th::minutes_grid(30);
  const auto m = align_covariates(rows, "a", grid);
  CHECK(m(0, 0) == 1.0);
  CHECK(m(2, 0) == 1.0);
  CHECK(m(3, 0) == 1.0);
  CHECK(m(4, 0) == 2.0);
  CHECK_THROWS_AS(align_covariates(rows, "b", grid), InputError);
}

TEST_CASE("rng streams are reproducible and distinct", "[rng]") {
  auto a = make_rng(5, {1, 2});
  auto b = make_rng(5, {1, 2});
  auto c = make_rng(5, {2, 1});
  const auto x = a();
  CHECK(x == b());
  CHECK(x != c());
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform_open(a);
    CHECK((u > 0.0 && u < 1.0));
  }
  CHECK(hash_label("G1") != hash_label("G2"));
}
