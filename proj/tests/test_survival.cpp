#include <catch_amalgamated.hpp>

#include <chrono>

#include "helpers.hpp"
#include "tir_ipw/survival.hpp"

using namespace tir_ipw;
using Catch::Approx;

using th::hand_covariates;
using th::hand_grid;
using th::kHand;
using th::oracle_loglik;

TEST_CASE("Cox fit matches a grid-search partial likelihood oracle", "[survival]") {
  const auto grid = hand_grid();
  const auto cov = hand_covariates(grid);
  std::vector<double> c;
  for (const auto& s : kHand) c.push_back(s.c);
  const CoxData data(grid, c, cov);
  const auto fit = fit_cox(data);
  REQUIRE(fit.converged);

  const double best = th::grid_search_beta(grid.tau_minutes());
  REQUIRE(std::abs(best) < 4.99);
  CHECK(std::abs(fit.beta[0] - best) < 1e-3);
  CHECK(fit.log_partial_likelihood == Approx(oracle_loglik(fit.beta[0], grid.tau_minutes())).epsilon(1e-10));
  Eigen::VectorXd b(1);
  b << 0.3;
  CHECK(log_partial_likelihood(data, b) == Approx(oracle_loglik(0.3, grid.tau_minutes())).epsilon(1e-12));
  CHECK(fit.null_log_partial_likelihood == Approx(oracle_loglik(0.0, grid.tau_minutes())).epsilon(1e-12));
}

TEST_CASE("Breslow increments at the fitted coefficient", "[survival]") {
  const auto grid = hand_grid();
  const auto cov = hand_covariates(grid);
  std::vector<double> c;
  for (const auto& s : kHand) c.push_back(s.c);
  const auto fit = fit_cox(CoxData(grid, c, cov));
  const double beta = fit.beta[0];
  REQUIRE(fit.jump_times == std::vector<double>{37.0, 120.0, 250.0, 600.0});
  double cum = 0.0;
  for (std::size_t k = 0; k < fit.jump_times.size(); ++k) {
    const double u = fit.jump_times[k];
    double risk = 0.0;
    int d = 0;
    for (const auto& s : kHand) {
      if (std::min(s.c, grid.tau_minutes()) >= u) risk += std::exp(beta * s.z(u - 1e-9));
      d += s.c == u;
    }
    cum += d / risk;
    CHECK(fit.increments[k] == Approx(d / risk).epsilon(1e-12));
    CHECK(fit.cumulative[k] == Approx(cum).epsilon(1e-12));
  }
  CHECK(fit.cumulative_hazard(36.9) == 0.0);
  CHECK(fit.cumulative_hazard(37.0) == fit.cumulative[0]);
  CHECK(fit.cumulative_hazard(5000.0) == fit.cumulative.back());

  // plug-in survival of subject 0 at grid points
  const auto curve = survival_prob(fit, cov[0], grid);
  for (std::size_t j : {0u, 7u, 8u, 30u, 200u}) {
    double h = 0.0;
    for (std::size_t k = 0; k < fit.jump_times.size(); ++k) {
      if (fit.jump_times[k] <= grid[j]) h += std::exp(beta * kHand[0].z(fit.jump_times[k] - 1e-9)) * fit.increments[k];
    }
    CHECK(curve.values[j] == Approx(std::exp(-h)).epsilon(1e-12));
  }
}

TEST_CASE("weighted Cox fit equals a fit on duplicated rows", "[survival]") {
  const auto grid = hand_grid();
  const auto cov = hand_covariates(grid);
  std::vector<double> c;
  for (const auto& s : kHand) c.push_back(s.c);
  const std::vector<double> w{2, 1, 0, 1, 3, 1};
  const auto weighted = fit_cox_weighted(CoxData(grid, c, cov), w, {});

  std::vector<double> c2;
  std::vector<CovariateProcess> cov2;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int k = 0; k < w[i]; ++k) {
      c2.push_back(c[i]);
      cov2.push_back(cov[i]);
    }
  }
  const auto dup = fit_cox(CoxData(grid, c2, cov2));
  CHECK(weighted.beta[0] == Approx(dup.beta[0]).epsilon(1e-9));
  REQUIRE(weighted.cumulative.size() == dup.cumulative.size());
  CHECK(weighted.cumulative.back() == Approx(dup.cumulative.back()).epsilon(1e-9));
}

TEST_CASE("Cox fit errors", "[survival]") {
  const auto grid = hand_grid();
  std::vector<double> c{100, 200, 300};
  std::vector<CovariateProcess> flat;
  for (int i = 0; i < 3; ++i) {
    flat.emplace_back("s" + std::to_string(i), grid, CovariateMatrix::Constant(grid.size(), 1, 0.7));
  }
  CoxOptions opt;
  opt.covariate_names = {"z1"};
  CHECK_THROWS_WITH(fit_cox(CoxData(grid, c, flat), opt), Catch::Matchers::ContainsSubstring("z1"));
  std::vector<double> none{5000, 5000, 5000};
  std::vector<CovariateProcess> vary;
  for (int i = 0; i < 3; ++i) {
    vary.emplace_back("s" + std::to_string(i), grid, CovariateMatrix::Constant(grid.size(), 1, i));
  }
  CHECK_THROWS_AS(fit_cox(CoxData(grid, none, vary)), FitError);
}

TEST_CASE("Cox fit recovers coefficients on a large fixed-covariate sample", "[survival]") {
  // exponential C with rate exp(0.8 x), x ~ N(0,1), tau = 2 days
  const TimeGrid grid(5.0, 2.0);
  auto rng = make_rng(3, {});
  std::normal_distribution<double> nd;
  std::vector<double> c;
  std::vector<CovariateProcess> cov;
  for (int i = 0; i < 3000; ++i) {
    const double x = nd(rng);
    c.push_back(-std::log(uniform_open(rng)) / std::exp(0.8 * x) * kMinutesPerDay);
    cov.emplace_back("s" + std::to_string(i), grid, CovariateMatrix::Constant(grid.size(), 1, x));
  }
  const auto t0 = std::chrono::steady_clock::now();
  const auto fit = fit_cox(CoxData(grid, c, cov));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(fit.beta[0] == Approx(0.8).margin(0.08));
  CHECK(fit.cumulative_hazard(kMinutesPerDay) == Approx(1.0).margin(0.1));
  CHECK(secs < 2.0);
}

TEST_CASE("weighted product-limit estimate", "[survival]") {
  const TimeGrid grid(5.0, 1.0);
  const std::vector<double> c{10, 20, 20, 50, 2000};
  std::vector<double> w(5, 1.0);
  const auto s = km_values(grid, c, w);
  CHECK(s[0] == 1.0);
  CHECK(s[1] == 1.0);
  CHECK(s[2] == Approx(0.8));
  CHECK(s[4] == Approx(0.4));
  CHECK(s[9] == Approx(0.4));
  CHECK(s[10] == Approx(0.2));
  CHECK(s.back() == Approx(0.2));

  const std::vector<double> w2{2, 1, 1, 1, 1};
  const auto s2 = km_values(grid, c, w2);
  CHECK(s2[2] == Approx(4.0 / 6.0));
  CHECK(s2[4] == Approx(4.0 / 6.0 * (1.0 - 2.0 / 4.0)));
  CHECK(s2[10] == Approx(4.0 / 6.0 * 0.5 * 0.5));
}

TEST_CASE("flat covariates can be held at zero", "[survival]") {
  const auto grid = hand_grid();
  const auto one = hand_covariates(grid);
  std::vector<CovariateProcess> two;
  for (const auto& c : one) {
    CovariateMatrix m(c.values().rows(), 2);
    m.col(0) = c.values().col(0);
    m.col(1).setConstant(-1.25);
    two.emplace_back(c.subject_id(), grid, m);
  }
  std::vector<double> c;
  for (const auto& s : kHand) c.push_back(s.c);
  const auto ref = fit_cox(CoxData(grid, c, one));
  CoxOptions opt;
  CHECK_THROWS_WITH(fit_cox(CoxData(grid, c, two), opt), Catch::Matchers::ContainsSubstring("z2"));
  opt.fix_flat_covariates = true;
  const auto fit = fit_cox(CoxData(grid, c, two), opt);
  REQUIRE(fit.converged);
  CHECK(fit.fixed_at_zero == std::vector<std::size_t>{1});
  CHECK(fit.beta[1] == 0.0);
  CHECK(fit.beta[0] == Approx(ref.beta[0]).epsilon(1e-10));
  CHECK(fit.log_partial_likelihood == Approx(ref.log_partial_likelihood).epsilon(1e-12));
}

TEST_CASE("partial likelihood stays finite for extreme coefficients", "[survival]") {
  const auto grid = hand_grid();
  std::vector<double> c;
  for (const auto& s : kHand) c.push_back(s.c);
  const CoxData data(grid, c, hand_covariates(grid));
  for (double b : {-800.0, 800.0}) {
    Eigen::VectorXd beta(1);
    beta << b;
    const double ll = log_partial_likelihood(data, beta);
    CHECK(std::isfinite(ll));
    CHECK(ll <= 0.0);
  }
  Eigen::VectorXd beta(1);
  beta << 2.0;
  CHECK(log_partial_likelihood(data, beta) == Approx(oracle_loglik(2.0, grid.tau_minutes())).epsilon(1e-12));
}
