#include <catch_amalgamated.hpp>

#include "helpers.hpp"
#include "tir_ipw/inference.hpp"

using namespace tir_ipw;
using Catch::Approx;

TEST_CASE("chi-square upper tail", "[inference]") {
  CHECK(chi_square_upper_tail(3.841458820694124, 1) == Approx(0.05).epsilon(1e-10));
  CHECK(chi_square_upper_tail(5.991464547107979, 2) == Approx(0.05).epsilon(1e-10));
  CHECK(chi_square_upper_tail(2.0, 2) == Approx(std::exp(-1.0)).epsilon(1e-13));
  CHECK(chi_square_upper_tail(0.0, 3) == 1.0);
  CHECK(chi_square_upper_tail(1e4, 1) < 1e-100);
}

TEST_CASE("resample multiplicities sum to n", "[inference]") {
  auto rng = make_rng(1, {});
  for (std::size_t n : {1u, 7u, 200u}) {
    const auto m = resample_multiplicity(n, rng);
    double s = 0;
    for (double x : m) s += x;
    CHECK(s == static_cast<double>(n));
  }
}

TEST_CASE("bootstrap summaries from a fixed run", "[inference]") {
  BootstrapRun run;
  run.estimate = {0.5};
  for (int b = 0; b < 40; ++b) run.replicates.push_back(std::vector<double>{0.01 * b});
  run.replicates[3].reset();
  run.failures = 1;
  const auto s = summarize(run, 0);
  REQUIRE(s.replicates.size() == 39);
  // order statistics k = ceil(0.025 * 39) - 1 = 0 and 38
  CHECK(s.ci_percentile.first == 0.0);
  CHECK(s.ci_percentile.second == Approx(0.39));
  std::vector<double> v;
  for (int b = 0; b < 40; ++b) {
    if (b != 3) v.push_back(0.01 * b);
  }
  double mean = 0, ss = 0;
  for (double x : v) mean += x / v.size();
  for (double x : v) ss += (x - mean) * (x - mean);
  CHECK(s.se == Approx(std::sqrt(ss / 38)).epsilon(1e-13));
  CHECK(s.ci_normal.first == Approx(0.5 - 1.959963984540054 * s.se));
}

TEST_CASE("bootstrap is reproducible and seed dependent", "[inference]") {
  const auto d = th::draw_group(sim::presets::informative(200, 8), 1, 8);
  const Engine e(d.observed, ranges::standard3(), {});
  BootstrapOptions opt;
  opt.B = 30;
  opt.seed = 99;
  const auto a = bootstrap_mu(e, opt);
  opt.threads = 1;
  const auto b = bootstrap_mu(e, opt);
  opt.seed = 100;
  const auto c = bootstrap_mu(e, opt);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(a[r].replicates == b[r].replicates);
    CHECK(a[r].se == b[r].se);
    CHECK(a[r].se != c[r].se);
    CHECK(a[r].se > 0.0);
  }
  std::vector<TirEstimate> est = e.estimates();
  attach(est, a);
  CHECK(*est[1].se == a[1].se);
  CHECK(est[1].ci->first <= est[1].ci->second);
  opt.B = 1;
  CHECK_THROWS_AS(bootstrap_run(e, opt), InputError);
}

TEST_CASE("Wald test bookkeeping", "[inference]") {
  const auto cfg = sim::presets::informative(60, 9);
  sim::ScenarioSampler s(cfg);
  const auto d = s.draw(9, 1);
  std::vector<Engine> same{Engine(d[1].observed, ranges::standard3(), {}),
                           Engine(d[1].observed, ranges::standard3(), {})};
  const std::vector<std::string> labels{"a", "b"};
  const auto t = wald_test(same, labels, 40, 1);
  REQUIRE(t.size() == 3);
  for (const auto& x : t) {
    CHECK(x.p_value == 1.0);
    CHECK(x.statistic == 0.0);
    CHECK(x.df == 1);
  }
  EstimatorConfig naive;
  naive.method = Method::naive;
  std::vector<Engine> three;
  for (const auto& g : d) three.emplace_back(g.observed, ranges::standard3(), naive);
  const std::vector<std::string> l3{"G1", "G2", "G3"};
  const auto t3 = wald_test(three, l3, 60, 2);
  CHECK(t3[0].df == 2);
  CHECK(t3[0].covariance.rows() == 2);
  CHECK(t3[0].contrast[0] == Approx(t3[0].estimates[1] - t3[0].estimates[0]));
  CHECK((t3[0].p_value >= 0.0 && t3[0].p_value <= 1.0));
  const Eigen::VectorXd x = t3[1].covariance.ldlt().solve(t3[1].contrast);
  CHECK(t3[1].statistic == Approx(t3[1].contrast.dot(x)));
  CHECK(t3[1].p_value == Approx(chi_square_upper_tail(t3[1].statistic, 2)));

  std::vector<Engine> one{Engine(d[0].observed, ranges::standard3(), {})};
  CHECK_THROWS_AS(wald_test(one, std::vector<std::string>{"x"}, 10, 1), InputError);
}

TEST_CASE("Wald test rejects a singular covariance", "[inference]") {
  BootstrapRun a, b;
  a.estimate = {0.2};
  b.estimate = {0.3};
  for (int k = 0; k < 10; ++k) {
    a.replicates.push_back(std::vector<double>{0.2});
    b.replicates.push_back(std::vector<double>{0.3});
  }
  const std::vector<BootstrapRun> runs{a, b};
  const std::vector<std::string> labels{"a", "b"};
  CHECK_THROWS_WITH(wald_from_runs(runs, labels, 0), Catch::Matchers::ContainsSubstring("increase B"));
}

TEST_CASE("group streams separate repeated labels", "[inference]") {
  const std::vector<std::string> l{"x", "x", "y"};
  const auto s = group_streams(l);
  CHECK(s[0] != s[1]);
  CHECK(s[0] != s[2]);
  const std::vector<std::string> l2{"x"};
  CHECK(group_streams(l2)[0] == s[0]);
}
